//! TOML-backed configuration for every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::erosion::DEFAULT_COMPLETENESS_RANGE;
use crate::error::{Error, Result};
use crate::inpaint::InpaintConfig;
use crate::metrics::EvalConfig;
use crate::patchbank::{DEFAULT_CAP, DEFAULT_MIN_COMPLETENESS};
use crate::projection::DEFAULT_MAX_DEPTH;
use crate::synth::StructureSpec;

/// A turn row applied to columns `start..end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRange {
    pub start: usize,
    pub end: usize,
    pub turn_row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub ground_z: f64,
    /// The annotation is a closed loop.
    pub closed: bool,
    /// Distance from the annotation to the camera path, m.
    pub offset: f64,
    pub step: f64,
    pub rows: usize,
    /// Turn row for columns not covered by `turn_ranges`.
    pub turn_row: usize,
    pub turn_ranges: Vec<TurnRange>,
    /// Column ranges `[start, end)` that turn from the ground.
    pub openings: Vec<[usize; 2]>,
    /// Defaults to 1.5 steps.
    pub splat_radius: Option<f64>,
    pub max_depth: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ground_z: 0.0,
            closed: false,
            offset: 0.5,
            step: 0.02,
            rows: 128,
            turn_row: 49,
            turn_ranges: Vec::new(),
            openings: Vec::new(),
            splat_radius: None,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config("sweep.step", format!("must be positive, got {}", self.step)));
        }
        if !(self.offset >= 0.0 && self.offset.is_finite()) {
            return Err(Error::config("sweep.offset", format!("must be >= 0, got {}", self.offset)));
        }
        if self.rows == 0 {
            return Err(Error::config("sweep.rows", "must be positive"));
        }
        if self.turn_row >= self.rows {
            return Err(Error::config(
                "sweep.turn_row",
                format!("{} must be below rows = {}", self.turn_row, self.rows),
            ));
        }
        for (i, r) in self.turn_ranges.iter().enumerate() {
            if r.turn_row >= self.rows || r.start > r.end {
                return Err(Error::config(
                    format!("sweep.turn_ranges[{i}]"),
                    format!("needs start <= end and turn_row < {}", self.rows),
                ));
            }
        }
        for (i, o) in self.openings.iter().enumerate() {
            if o[0] > o[1] {
                return Err(Error::config(format!("sweep.openings[{i}]"), "start after end"));
            }
        }
        if let Some(r) = self.splat_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::config("sweep.splat_radius", format!("must be positive, got {r}")));
            }
        }
        if !(self.max_depth > 0.0 && self.max_depth.is_finite()) {
            return Err(Error::config("sweep.max_depth", format!("must be positive, got {}", self.max_depth)));
        }
        Ok(())
    }

    pub fn splat_radius(&self) -> f64 {
        self.splat_radius
            .unwrap_or_else(|| crate::projection::default_splat_radius(self.step))
    }

    /// Per-column turn rows; later ranges override earlier ones.
    pub fn turn_rows(&self, columns: usize) -> Vec<usize> {
        let mut out = vec![self.turn_row; columns];
        for r in &self.turn_ranges {
            for t in out.iter_mut().take(r.end.min(columns)).skip(r.start) {
                *t = r.turn_row;
            }
        }
        out
    }

    pub fn opening_mask(&self, columns: usize) -> Vec<bool> {
        let mut out = vec![false; columns];
        for o in &self.openings {
            for f in out.iter_mut().take(o[1].min(columns)).skip(o[0]) {
                *f = true;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErosionConfig {
    /// Side of the synthetic mask patches.
    pub mask_w: usize,
    /// Number of masks in the synthetic mask bank.
    pub bank_size: usize,
    pub completeness_range: (f64, f64),
    /// Fixed mask count. When absent, masks are added until
    /// `target_fraction` of the known pixels are held out.
    pub n_masks: Option<usize>,
    pub target_fraction: f64,
    pub max_masks: usize,
}

impl Default for ErosionConfig {
    fn default() -> Self {
        ErosionConfig {
            mask_w: 64,
            bank_size: 64,
            completeness_range: DEFAULT_COMPLETENESS_RANGE,
            n_masks: None,
            target_fraction: 0.3,
            max_masks: 400,
        }
    }
}

impl ErosionConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.completeness_range;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::config(
                "erosion.completeness_range",
                format!("({lo}, {hi}) must satisfy 0 <= lo < hi <= 1"),
            ));
        }
        if self.mask_w == 0 {
            return Err(Error::config("erosion.mask_w", "must be positive"));
        }
        if self.bank_size == 0 {
            return Err(Error::config("erosion.bank_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.target_fraction) {
            return Err(Error::config(
                "erosion.target_fraction",
                format!("{} outside [0, 1]", self.target_fraction),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    /// Patch side; when absent, a quarter of the image height.
    pub w: Option<usize>,
    pub min_completeness: f64,
    pub stride: usize,
    pub cap: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            w: None,
            min_completeness: DEFAULT_MIN_COMPLETENESS,
            stride: 8,
            cap: DEFAULT_CAP,
        }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_completeness > 0.0 && self.min_completeness <= 1.0) {
            return Err(Error::config(
                "bank.min_completeness",
                format!("{} outside (0, 1]", self.min_completeness),
            ));
        }
        if self.stride == 0 {
            return Err(Error::config("bank.stride", "must be positive"));
        }
        if self.w == Some(0) {
            return Err(Error::config("bank.w", "must be positive"));
        }
        if self.cap == 0 {
            return Err(Error::config("bank.cap", "must be positive"));
        }
        Ok(())
    }
}

/// Everything `pipeline` needs. Each structure may override the sweep that
/// the synthesizer recommends for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub structures: Vec<StructureSpec>,
    pub erosion: ErosionConfig,
    pub bank: BankConfig,
    pub inpaint: InpaintConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            structures: vec![
                StructureSpec::straight("straight", 3.0, 1.2),
                StructureSpec::l_shape("corner", 2.5, 2.0, 1.2),
            ],
            erosion: ErosionConfig::default(),
            bank: BankConfig {
                w: Some(32),
                ..BankConfig::default()
            },
            inpaint: InpaintConfig {
                w: 32,
                ..InpaintConfig::default()
            },
            eval: EvalConfig {
                w: 32,
                ..EvalConfig::default()
            },
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.structures.is_empty() {
            return Err(Error::config("structures", "at least one structure is required"));
        }
        for (i, s) in self.structures.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::config(format!("structures[{i}]"), e.to_string()))?;
        }
        self.erosion.validate()?;
        self.bank.validate()?;
        self.inpaint.validate()?;
        if self.eval.w == 0 {
            return Err(Error::config("eval.w", "must be positive"));
        }
        Ok(())
    }
}

/// Parse a TOML file into `T`.
pub fn load_toml<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_toml(&text)
}

pub fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let key = e
            .span()
            .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
            .map_or_else(|| "config".to_string(), |line| format!("config line {line}"));
        Error::config(key, e.message())
    })
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::config("config", e.to_string()))
}

/// Hex SHA-256 of the config's canonical JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_override_default_turn_row() {
        let cfg = SweepConfig {
            rows: 10,
            turn_row: 4,
            turn_ranges: vec![TurnRange {
                start: 2,
                end: 4,
                turn_row: 7,
            }],
            openings: vec![[3, 5]],
            ..SweepConfig::default()
        };
        assert_eq!(cfg.turn_rows(6), vec![4, 4, 7, 7, 4, 4]);
        assert_eq!(cfg.opening_mask(6), vec![false, false, false, true, true, false]);
    }

    #[test]
    fn validation_names_the_key() {
        let cfg = SweepConfig {
            turn_row: 200,
            ..SweepConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "sweep.turn_row"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pipeline_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = to_toml(&cfg).unwrap();
        let back: PipelineConfig = parse_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(config_hash(&back), config_hash(&cfg));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_toml::<SweepConfig>("stepp = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("stepp"), "{err}");
    }
}
