use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

use mcop::config::{load_toml, BankConfig, ErosionConfig, PipelineConfig, SweepConfig};
use mcop::container::{read_held_out, read_mcop, write_held_out, write_mcop};
use mcop::erosion::{erode_image, erode_to_fraction};
use mcop::inpaint::{baseline_inpaint, constant_fill, export_for_external, import_from_external, InpaintConfig};
use mcop::metrics::{evaluate, EvalConfig};
use mcop::patchbank::{build_bank, default_patch_size, read_bank, write_bank};
use mcop::pipeline::{
    check_mask_law, mask_bank_for, project_cloud, reports_json, reports_text, run_pipeline, sweep_setup, write_text,
    Manifest, REPORT_JSON_FILE, REPORT_TEXT_FILE,
};
use mcop::ply::{read_ply, write_ply};
use mcop::preview::write_previews;
use mcop::reproject::reproject;
use mcop::seed::sub_seed;
use mcop::sweep::{format_annotation, parse_annotation, RotationProfile};
use mcop::synth::{synth_wall, StructureSpec};
use mcop::{Error, ErrorKind, McopImage, Result};

#[derive(Parser)]
#[command(name = "mcop", version, about = "MCOP point cloud completion pipeline")]
struct Cli {
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "MCOP_WORKERS", default_value_t = 0)]
    workers: usize,
    /// TOML config for the command; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a textured wall point cloud and its annotation.
    Synth(SynthArgs),
    /// Project a point cloud into an MCOP image.
    Project(ProjectArgs),
    /// Hide random regions of an image, keeping the held-out map.
    Erode(ErodeArgs),
    /// Harvest nearly complete windows into a patch bank.
    PatchBank(PatchBankArgs),
    /// Fill the unknown pixels of an image.
    Inpaint(InpaintArgs),
    /// Write an exchange directory for an external completer.
    Export(ExportArgs),
    /// Read back an exchange directory.
    Import(ImportArgs),
    /// Turn an MCOP image back into a point cloud.
    Reproject(ReprojectArgs),
    /// Compare a completed image against the truth.
    Eval(EvalArgs),
    /// Write PNG previews of an image.
    Preview(PreviewArgs),
    /// Run every stage end to end on synthetic structures.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    height: Option<f64>,
    #[arg(long)]
    spacing: Option<f64>,
}

/// Sweep flags shared by the commands that need a camera path.
#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    annotation: PathBuf,
    /// TOML sweep settings; defaults to the config file or built-ins.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long)]
    closed: bool,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    turn_row: Option<usize>,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ErodeArgs {
    #[arg(long)]
    image: PathBuf,
    /// Mask bank; when absent, synthetic masks are generated.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    n_masks: Option<usize>,
    #[arg(long)]
    target_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PatchBankArgs {
    #[arg(long, required = true, num_args = 1..)]
    images: Vec<PathBuf>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    min_completeness: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Baseline,
    Constant,
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "baseline")]
    method: Method,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReprojectArgs {
    #[arg(long)]
    image: PathBuf,
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long)]
    ascii: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Held-out map; defaults to every pixel known in the truth.
    #[arg(long)]
    held_out: Option<PathBuf>,
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreviewArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "preview")]
    stem: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    target_fraction: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load_toml)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn single_annotation(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut loops = parse_annotation(&text)?;
    match loops.len() {
        1 => Ok(loops.remove(0)),
        n => Err(Error::config(
            display(path),
            format!("expected exactly one polyline, found {n}"),
        )),
    }
}

fn sweep_config(args: &SweepArgs, fallback: Option<&Path>) -> Result<SweepConfig> {
    let mut cfg: SweepConfig = load_or_default(args.sweep.as_deref().or(fallback))?;
    cfg.closed |= args.closed;
    if let Some(v) = args.step {
        cfg.step = v;
    }
    if let Some(v) = args.offset {
        cfg.offset = v;
    }
    if let Some(v) = args.rows {
        cfg.rows = v;
    }
    if let Some(v) = args.turn_row {
        cfg.turn_row = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish<C: Serialize>(
    command: &str,
    seed: u64,
    config: &C,
    inputs: &[&Path],
    outputs: &[&str],
    details: serde_json::Value,
    out: &Path,
) -> Result<()> {
    let mut manifest = Manifest::new(command, seed, config);
    manifest.inputs = inputs.iter().map(|p| display(p)).collect();
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    manifest.details = details;
    manifest.write(out)?;
    info!("{command}: wrote {} into {}", outputs.join(", "), out.display());
    Ok(())
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut spec: StructureSpec = load_or_default(cli.config.as_deref())?;
    if let Some(h) = args.height {
        spec.height = h;
    }
    if let Some(s) = args.spacing {
        spec.spacing = s;
    }
    spec.validate()?;
    let wall = synth_wall(&spec, sub_seed(cli.seed, &format!("synth/{}", spec.name)))?;
    write_ply(&wall.cloud, args.out.join("cloud.ply"), true)?;
    write_text(args.out.join("annotation.txt"), &format_annotation(&[wall.annotation.clone()]))?;
    write_text(args.out.join("structure.toml"), &mcop::config::to_toml(&spec)?)?;
    write_text(args.out.join("sweep.toml"), &mcop::config::to_toml(&wall.sweep)?)?;
    finish(
        "synth",
        cli.seed,
        &spec,
        &[],
        &["cloud.ply", "annotation.txt", "structure.toml", "sweep.toml"],
        serde_json::json!({ "points": wall.cloud.len() }),
        &args.out,
    )
}

fn project(cli: &Cli, args: &ProjectArgs) -> Result<()> {
    let cloud = read_ply(&args.cloud)?;
    let annotation = single_annotation(&args.sweep.annotation)?;
    let cfg = sweep_config(&args.sweep, cli.config.as_deref())?;
    let (path, profile) = sweep_setup(&annotation, &cfg)?;
    let image = project_cloud(&cloud, &path, &profile, &cfg)?;
    check_mask_law("project", &image)?;
    write_mcop(&image, args.out.join("image.mcop"))?;
    finish(
        "project",
        cli.seed,
        &cfg,
        &[&args.cloud, &args.sweep.annotation],
        &["image.mcop"],
        serde_json::json!({ "width": image.width(), "height": image.height(), "known": image.known_count() }),
        &args.out,
    )
}

fn erode(cli: &Cli, args: &ErodeArgs) -> Result<()> {
    let image = read_mcop(&args.image)?;
    let mut cfg: ErosionConfig = load_or_default(cli.config.as_deref())?;
    if args.n_masks.is_some() {
        cfg.n_masks = args.n_masks;
    }
    if let Some(t) = args.target_fraction {
        cfg.target_fraction = t;
    }
    cfg.validate()?;
    let masks = match &args.masks {
        Some(p) => read_bank(p)?,
        None => mask_bank_for(&image, &cfg, sub_seed(cli.seed, "mask-bank"))?,
    };
    let seed = sub_seed(cli.seed, "erode");
    let erosion = match cfg.n_masks {
        Some(n) => erode_image(&image, &masks, n, cfg.completeness_range, seed)?,
        None => erode_to_fraction(&image, &masks, cfg.target_fraction, cfg.completeness_range, cfg.max_masks, seed)?,
    };
    check_mask_law("erode", &erosion.image)?;
    write_mcop(&erosion.image, args.out.join("eroded.mcop"))?;
    write_held_out(&erosion.held_out, args.out.join("held_out.mhld"))?;
    let mut inputs = vec![args.image.as_path()];
    inputs.extend(args.masks.as_deref());
    finish(
        "erode",
        cli.seed,
        &cfg,
        &inputs,
        &["eroded.mcop", "held_out.mhld"],
        serde_json::json!({
            "masks_applied": erosion.applied.len(),
            "held_out": erosion.held_out.count_ones(),
            "held_out_fraction": erosion.held_out_fraction(image.known_count()),
        }),
        &args.out,
    )
}

fn patch_bank(cli: &Cli, args: &PatchBankArgs) -> Result<()> {
    let images = args.images.iter().map(read_mcop).collect::<Result<Vec<McopImage>>>()?;
    let mut cfg: BankConfig = load_or_default(cli.config.as_deref())?;
    if args.w.is_some() {
        cfg.w = args.w;
    }
    if let Some(s) = args.stride {
        cfg.stride = s;
    }
    if let Some(m) = args.min_completeness {
        cfg.min_completeness = m;
    }
    cfg.validate()?;
    let min_height = images.iter().map(McopImage::height).min().unwrap_or(0);
    let w = cfg.w.unwrap_or_else(|| default_patch_size(min_height));
    let bank = build_bank(&images, w, cfg.min_completeness, cfg.stride, cfg.cap, sub_seed(cli.seed, "patch-bank"))?;
    write_bank(&bank, args.out.join("bank.mpbk"))?;
    let inputs: Vec<&Path> = args.images.iter().map(PathBuf::as_path).collect();
    finish(
        "patch-bank",
        cli.seed,
        &cfg,
        &inputs,
        &["bank.mpbk"],
        serde_json::json!({ "w": w, "patches": bank.len(), "rows": bank.row_distribution(min_height, 10) }),
        &args.out,
    )
}

fn inpaint(cli: &Cli, args: &InpaintArgs) -> Result<()> {
    let image = read_mcop(&args.image)?;
    let profile = RotationProfile::from_image(&image);
    let mut cfg: InpaintConfig = load_or_default(cli.config.as_deref())?;
    if let Some(i) = args.iterations {
        cfg.iterations = i;
    }
    cfg.seed = sub_seed(cli.seed, "inpaint");
    let mut inputs = vec![args.image.as_path()];
    let (completed, details) = match args.method {
        Method::Constant => (constant_fill(&image, &profile)?, serde_json::json!({ "method": "constant" })),
        Method::Baseline => {
            let bank_path = args
                .bank
                .as_deref()
                .ok_or_else(|| Error::config("bank", "the baseline method needs --bank"))?;
            inputs.push(bank_path);
            let bank = read_bank(bank_path)?;
            cfg.w = bank.w();
            let done = baseline_inpaint(&image, &bank, &profile, &cfg)?;
            (done.image, serde_json::json!({ "method": "baseline", "score_history": done.score_history }))
        }
    };
    check_mask_law("inpaint", &completed)?;
    write_mcop(&completed, args.out.join("completed.mcop"))?;
    finish("inpaint", cli.seed, &cfg, &inputs, &["completed.mcop"], details, &args.out)
}

fn export(cli: &Cli, args: &ExportArgs) -> Result<()> {
    let image = read_mcop(&args.image)?;
    export_for_external(&image, &RotationProfile::from_image(&image), &args.out)?;
    finish(
        "export",
        cli.seed,
        &serde_json::Value::Null,
        &[&args.image],
        &[mcop::inpaint::INPUT_FILE, mcop::inpaint::PRIOR_FILE],
        serde_json::Value::Null,
        &args.out,
    )
}

fn import(cli: &Cli, args: &ImportArgs) -> Result<()> {
    let imported = import_from_external(&args.dir)?;
    check_mask_law("import", &imported.image)?;
    write_mcop(&imported.image, args.out.join("completed.mcop"))?;
    finish(
        "import",
        cli.seed,
        &serde_json::Value::Null,
        &[&args.dir],
        &["completed.mcop"],
        serde_json::json!({ "warnings": imported.warnings }),
        &args.out,
    )
}

fn reproject_cmd(cli: &Cli, args: &ReprojectArgs) -> Result<()> {
    let image = read_mcop(&args.image)?;
    let annotation = single_annotation(&args.sweep.annotation)?;
    let cfg = sweep_config(&args.sweep, cli.config.as_deref())?;
    let (path, _) = sweep_setup(&annotation, &cfg)?;
    let cloud = reproject(&image, &path, cfg.step)?;
    write_ply(&cloud, args.out.join("cloud.ply"), !args.ascii)?;
    finish(
        "reproject",
        cli.seed,
        &cfg,
        &[&args.image, &args.sweep.annotation],
        &["cloud.ply"],
        serde_json::json!({ "points": cloud.len() }),
        &args.out,
    )
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let pred = read_mcop(&args.pred)?;
    let truth = read_mcop(&args.truth)?;
    let held_out = match &args.held_out {
        Some(p) => read_held_out(p)?,
        None => truth.mask_plane(),
    };
    let annotation = single_annotation(&args.sweep.annotation)?;
    let sweep = sweep_config(&args.sweep, None)?;
    let (path, _) = sweep_setup(&annotation, &sweep)?;
    let mut cfg: EvalConfig = load_or_default(cli.config.as_deref())?;
    if let Some(n) = args.windows {
        cfg.n_windows = n;
    }
    if let Some(w) = args.w {
        cfg.w = w;
    }
    cfg.seed = sub_seed(cli.seed, "eval");
    let name = args.pred.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let report = evaluate(&name, &pred, &truth, &held_out, &path, &cfg)?;
    write_text(args.out.join(REPORT_TEXT_FILE), &report.to_key_value())?;
    write_text(args.out.join(REPORT_JSON_FILE), &(report.to_json() + "\n"))?;
    let mut inputs = vec![args.pred.as_path(), args.truth.as_path(), args.sweep.annotation.as_path()];
    inputs.extend(args.held_out.as_deref());
    finish(
        "eval",
        cli.seed,
        &(&cfg, &sweep),
        &inputs,
        &[REPORT_TEXT_FILE, REPORT_JSON_FILE],
        serde_json::Value::Null,
        &args.out,
    )
}

fn preview(cli: &Cli, args: &PreviewArgs) -> Result<()> {
    let image = read_mcop(&args.image)?;
    let names = write_previews(&image, &args.out, &args.stem)?;
    let outputs: Vec<&str> = names.iter().map(String::as_str).collect();
    finish(
        "preview",
        cli.seed,
        &serde_json::Value::Null,
        &[&args.image],
        &outputs,
        serde_json::Value::Null,
        &args.out,
    )
}

fn pipeline(cli: &Cli, args: &PipelineArgs) -> Result<()> {
    let mut cfg: PipelineConfig = load_or_default(cli.config.as_deref())?;
    if let Some(t) = args.target_fraction {
        cfg.erosion.target_fraction = t;
    }
    if let Some(i) = args.iterations {
        cfg.inpaint.iterations = i;
    }
    let run = run_pipeline(&cfg, cli.seed, Some(&args.out))?;
    let reports: Vec<_> = run.structures.iter().map(|s| s.report.clone()).collect();
    debug_assert_eq!(
        std::fs::read_to_string(args.out.join(REPORT_JSON_FILE)).ok(),
        Some(reports_json(&reports, &run.summary))
    );
    print!("{}", reports_text(&reports, &run.summary));
    Ok(())
}

impl Command {
    fn out(&self) -> &Path {
        match self {
            Command::Synth(a) => &a.out,
            Command::Project(a) => &a.out,
            Command::Erode(a) => &a.out,
            Command::PatchBank(a) => &a.out,
            Command::Inpaint(a) => &a.out,
            Command::Export(a) => &a.out,
            Command::Import(a) => &a.out,
            Command::Reproject(a) => &a.out,
            Command::Eval(a) => &a.out,
            Command::Preview(a) => &a.out,
            Command::Pipeline(a) => &a.out,
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let out = cli.command.out();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Project(a) => project(cli, a),
        Command::Erode(a) => erode(cli, a),
        Command::PatchBank(a) => patch_bank(cli, a),
        Command::Inpaint(a) => inpaint(cli, a),
        Command::Export(a) => export(cli, a),
        Command::Import(a) => import(cli, a),
        Command::Reproject(a) => reproject_cmd(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Preview(a) => preview(cli, a),
        Command::Pipeline(a) => pipeline(cli, a),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Invariant => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {} workers: {e}", cli.workers);
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
