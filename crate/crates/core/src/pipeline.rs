//! End-to-end runs: synthesize, project, erode, harvest a patch bank,
//! inpaint, reproject and evaluate, writing every intermediate to disk.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, to_toml, ErosionConfig, PipelineConfig, SweepConfig};
use crate::container::{write_held_out, write_mcop};
use crate::erosion::{erode_image, erode_to_fraction, Erosion};
use crate::error::{Error, Result};
use crate::image::{derive_mask, McopImage};
use crate::inpaint::{baseline_inpaint, InpaintConfig};
use crate::metrics::{evaluate, EvalConfig, MetricsReport};
use crate::patchbank::{build_bank, write_bank, PatchBank};
use crate::ply::write_ply;
use crate::preview::write_previews;
use crate::projection::project;
use crate::reproject::reproject;
use crate::seed::sub_seed;
use crate::sweep::{
    build_rotation_profile, format_annotation, integrate_slit_poses, resample_path, RotationProfile, SweepPath,
};
use crate::synth::{synth_mask_bank, synth_wall, FaceSet, StructureSpec, SynthWall};
use crate::PointCloud;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_TEXT_FILE: &str = "metrics.txt";
pub const REPORT_JSON_FILE: &str = "metrics.json";

/// Provenance written next to every command's outputs. Contains no clock
/// values, so reruns produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Command-specific results, such as score histories or warning counts.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Self {
        Manifest {
            command: command.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            config_hash: config_hash(config),
            config: serde_json::to_value(config).expect("config serializes"),
            details: serde_json::Value::Null,
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_text(&path, &text)?;
        Ok(path)
    }
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Fails unless the stored mask is exactly "depth is finite".
pub fn check_mask_law(stage: &str, image: &McopImage) -> Result<()> {
    if derive_mask(image) != image.mask_plane() {
        return Err(Error::Invariant(format!("{stage}: mask disagrees with depth")));
    }
    Ok(())
}

/// A synthetic structure seen through its sweep.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: StructureSpec,
    pub wall: SynthWall,
    pub sweep: SweepConfig,
    pub path: SweepPath,
    pub profile: RotationProfile,
    pub truth: McopImage,
}

impl Scene {
    /// The surfaces the sweep can observe: the near face and the top.
    pub fn visible_truth(&self) -> PointCloud {
        self.wall.subset(FaceSet {
            near: true,
            far: false,
            top: true,
        })
    }
}

/// Sweep geometry for an annotation.
pub fn sweep_setup(annotation: &[[f64; 2]], sweep: &SweepConfig) -> Result<(SweepPath, RotationProfile)> {
    sweep.validate()?;
    let path = resample_path(annotation, sweep.ground_z, sweep.offset, sweep.step, sweep.closed)?;
    let columns = path.columns();
    let openings = sweep.opening_mask(columns);
    let profile = build_rotation_profile(sweep.rows, &sweep.turn_rows(columns), Some(&openings))?;
    Ok((path, profile))
}

/// Project `cloud` through the sweep.
pub fn project_cloud(
    cloud: &PointCloud,
    path: &SweepPath,
    profile: &RotationProfile,
    sweep: &SweepConfig,
) -> Result<McopImage> {
    let poses = integrate_slit_poses(path, profile, sweep.rows, sweep.step)?;
    let mut image = project(cloud, &poses, sweep.splat_radius(), sweep.max_depth)?;
    image.set_wrap(path.closed);
    Ok(image)
}

pub fn build_scene(spec: &StructureSpec, seed: u64) -> Result<Scene> {
    let wall = synth_wall(spec, sub_seed(seed, &format!("synth/{}", spec.name))).map_err(|e| e.in_stage("synth"))?;
    let sweep = wall.sweep.clone();
    let (path, profile) = sweep_setup(&wall.annotation, &sweep).map_err(|e| e.in_stage("project"))?;
    let truth = project_cloud(&wall.cloud, &path, &profile, &sweep).map_err(|e| e.in_stage("project"))?;
    check_mask_law("project", &truth)?;
    Ok(Scene {
        spec: spec.clone(),
        wall,
        sweep,
        path,
        profile,
        truth,
    })
}

/// Synthetic mask bank sized to fit `image`, with severities matching the
/// completeness range.
pub fn mask_bank_for(image: &McopImage, cfg: &ErosionConfig, seed: u64) -> Result<PatchBank> {
    let w = cfg.mask_w.min(image.width()).min(image.height());
    let (lo, hi) = cfg.completeness_range;
    let severity = ((1.0 - hi).max(0.01), (1.0 - lo).min(0.99));
    synth_mask_bank(cfg.bank_size, w, severity, seed)
}

pub fn erode_scene(image: &McopImage, cfg: &ErosionConfig, seed: u64) -> Result<(Erosion, PatchBank)> {
    cfg.validate()?;
    let masks = mask_bank_for(image, cfg, sub_seed(seed, "mask-bank"))?;
    let erosion_seed = sub_seed(seed, "erode");
    let erosion = match cfg.n_masks {
        Some(n) => erode_image(image, &masks, n, cfg.completeness_range, erosion_seed)?,
        None => erode_to_fraction(
            image,
            &masks,
            cfg.target_fraction,
            cfg.completeness_range,
            cfg.max_masks,
            erosion_seed,
        )?,
    };
    check_mask_law("erode", &erosion.image)?;
    Ok((erosion, masks))
}

/// Per-structure result of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct StructureRun {
    pub scene: Scene,
    pub erosion: Erosion,
    pub completed: McopImage,
    pub completed_cloud: PointCloud,
    pub score_history: Vec<f64>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub structures: Vec<StructureRun>,
    pub bank: PatchBank,
    pub summary: MetricsReport,
}

/// The metrics file: one block per structure, then the mean over all of them.
pub fn reports_text(reports: &[MetricsReport], summary: &MetricsReport) -> String {
    let mut out = String::new();
    for r in reports.iter().chain(std::iter::once(summary)) {
        out.push_str(&format!("[{}]\n", r.structure));
        out.push_str(&r.to_key_value());
        out.push('\n');
    }
    out
}

pub fn reports_json(reports: &[MetricsReport], summary: &MetricsReport) -> String {
    #[derive(Serialize)]
    struct Doc<'a> {
        structures: &'a [MetricsReport],
        summary: &'a MetricsReport,
    }
    serde_json::to_string_pretty(&Doc {
        structures: reports,
        summary,
    })
    .expect("reports serialize")
        + "\n"
}

/// First error in input order, so failures do not depend on scheduling.
fn in_order<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn inpaint_settings(cfg: &PipelineConfig, heights: impl Iterator<Item = usize>) -> Result<InpaintConfig> {
    let min_height = heights.min().unwrap_or(0);
    let w = cfg.bank.w.unwrap_or(cfg.inpaint.w);
    if cfg.inpaint.w != w {
        return Err(Error::config(
            "bank.w",
            format!("patch side {w} differs from inpaint.w = {}", cfg.inpaint.w),
        ));
    }
    if w > min_height {
        return Err(Error::config(
            "inpaint.w",
            format!("patch side {w} exceeds the shortest image height {min_height}"),
        ));
    }
    Ok(cfg.inpaint.clone())
}

/// Run every structure end to end. With `out` set, each structure writes its
/// artifacts into `out/<name>/` and the run writes the metrics files, the
/// effective config and a manifest into `out`.
pub fn run_pipeline(cfg: &PipelineConfig, seed: u64, out: Option<&Path>) -> Result<PipelineRun> {
    cfg.validate()?;
    let mut names: Vec<&str> = cfg.structures.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if let Some(pair) = names.windows(2).find(|p| p[0] == p[1]) {
        return Err(Error::config("structures", format!("duplicate structure name `{}`", pair[0])));
    }

    let staged: Vec<Result<(Scene, Erosion, PatchBank)>> = cfg
        .structures
        .par_iter()
        .map(|spec| {
            let scene = build_scene(spec, seed)?;
            let (erosion, masks) = erode_scene(&scene.truth, &cfg.erosion, sub_seed(seed, &format!("erode/{}", spec.name)))
                .map_err(|e| e.in_stage("erode"))?;
            Ok((scene, erosion, masks))
        })
        .collect();
    let staged = in_order(staged)?;

    let inpaint_cfg = inpaint_settings(cfg, staged.iter().map(|(s, _, _)| s.truth.height()))?;
    let eroded: Vec<McopImage> = staged.iter().map(|(_, e, _)| e.image.clone()).collect();
    let bank = build_bank(
        &eroded,
        inpaint_cfg.w,
        cfg.bank.min_completeness,
        cfg.bank.stride,
        cfg.bank.cap,
        sub_seed(seed, "patch-bank"),
    )
    .map_err(|e| e.in_stage("patch-bank"))?;

    let finished: Vec<Result<StructureRun>> = staged
        .into_par_iter()
        .map(|(scene, erosion, masks)| {
            let name = scene.spec.name.clone();
            let icfg = InpaintConfig {
                seed: sub_seed(seed, &format!("inpaint/{name}")),
                ..inpaint_cfg.clone()
            };
            let done = baseline_inpaint(&erosion.image, &bank, &scene.profile, &icfg).map_err(|e| e.in_stage("inpaint"))?;
            check_mask_law("inpaint", &done.image)?;
            let cloud = reproject(&done.image, &scene.path, scene.sweep.step).map_err(|e| e.in_stage("reproject"))?;
            let ecfg = EvalConfig {
                seed: sub_seed(seed, &format!("eval/{name}")),
                ..cfg.eval.clone()
            };
            let report = evaluate(&name, &done.image, &scene.truth, &erosion.held_out, &scene.path, &ecfg)
                .map_err(|e| e.in_stage("eval"))?;
            let run = StructureRun {
                scene,
                erosion,
                completed: done.image,
                completed_cloud: cloud,
                score_history: done.score_history,
                report,
            };
            if let Some(out) = out {
                write_structure(&run, &masks, &out.join(&name)).map_err(|e| e.in_stage("write"))?;
            }
            Ok(run)
        })
        .collect();
    let structures = in_order(finished)?;

    let reports: Vec<MetricsReport> = structures.iter().map(|s| s.report.clone()).collect();
    let mut summary = MetricsReport::aggregate("all", &reports);
    summary.seed = seed;
    if let Some(out) = out {
        write_bank(&bank, out.join("patch_bank.mpbk"))?;
        write_text(out.join(REPORT_TEXT_FILE), &reports_text(&reports, &summary))?;
        write_text(out.join(REPORT_JSON_FILE), &reports_json(&reports, &summary))?;
        write_text(out.join("config.toml"), &to_toml(cfg)?)?;
        let mut manifest = Manifest::new("pipeline", seed, cfg);
        manifest.outputs = std::iter::once("patch_bank.mpbk".to_string())
            .chain([REPORT_TEXT_FILE, REPORT_JSON_FILE, "config.toml"].map(String::from))
            .chain(names.iter().map(|n| format!("{n}/")))
            .collect();
        manifest.write(out)?;
    }
    Ok(PipelineRun {
        structures,
        bank,
        summary,
    })
}

fn write_structure(run: &StructureRun, masks: &PatchBank, dir: &Path) -> Result<()> {
    let annotation = format_annotation(&[run.scene.wall.annotation.clone()]);
    write_text(dir.join("annotation.txt"), &annotation)?;
    write_text(dir.join("structure.toml"), &to_toml(&run.scene.spec)?)?;
    write_text(dir.join("sweep.toml"), &to_toml(&run.scene.sweep)?)?;
    write_ply(&run.scene.wall.cloud, dir.join("truth.ply"), true)?;
    write_mcop(&run.scene.truth, dir.join("truth.mcop"))?;
    write_bank(masks, dir.join("mask_bank.mpbk"))?;
    write_mcop(&run.erosion.image, dir.join("eroded.mcop"))?;
    write_held_out(&run.erosion.held_out, dir.join("held_out.mhld"))?;
    write_mcop(&run.completed, dir.join("completed.mcop"))?;
    write_ply(&run.completed_cloud, dir.join("completed.ply"), true)?;
    write_text(dir.join("report.txt"), &run.report.to_key_value())?;
    write_text(dir.join("report.json"), &(run.report.to_json() + "\n"))?;
    write_previews(&run.scene.truth, dir, "truth")?;
    write_previews(&run.erosion.image, dir, "eroded")?;
    write_previews(&run.completed, dir, "completed")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.structures = vec![StructureSpec {
            spacing: 0.02,
            ..StructureSpec::straight("s", 1.2, 0.6)
        }];
        cfg.erosion.mask_w = 16;
        cfg.erosion.bank_size = 8;
        cfg.bank.w = Some(16);
        cfg.bank.stride = 4;
        cfg.inpaint.w = 16;
        cfg.inpaint.iterations = 1;
        cfg.inpaint.search_candidates = 8;
        cfg.eval.w = 16;
        cfg.eval.n_windows = 20;
        cfg
    }

    #[test]
    fn every_stage_respects_the_mask_law() {
        let run = run_pipeline(&small(), 3, None).unwrap();
        let s = &run.structures[0];
        for img in [&s.scene.truth, &s.erosion.image, &s.completed] {
            check_mask_law("test", img).unwrap();
        }
        assert!(s.erosion.held_out.count_ones() > 0);
        assert!(s.report.chamfer_cd.is_some());
    }

    #[test]
    fn mismatched_patch_sides_name_the_key() {
        let mut cfg = small();
        cfg.bank.w = Some(8);
        match run_pipeline(&cfg, 0, None) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "bank.w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_has_no_clock() {
        let m = Manifest::new("x", 4, &small());
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"seed\":4"));
        assert_eq!(m.config_hash, config_hash(&small()));
    }
}
