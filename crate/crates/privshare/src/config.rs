//! JSON run configuration with full-report validation.
//!
//! A config file carries the source model under a `gaussian` or `binary`
//! key, dataset generation parameters (`n`, `train_fraction`, `seed`),
//! a `trainer` section and a `protocol` section. Command-line flags win
//! over file values; the environment variable `PRIVSHARE_SEED` is the
//! seed of last resort. Validation collects every violation with the
//! offending key path instead of stopping at the first.

use crate::sources::{BinarySource, GaussianJointSource};
use crate::sweep::{DataSpec, SourceSpec, SweepProtocol};
use crate::trainer::{Mode, TrainerConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment fallback for the seed when neither flag nor file has one.
pub const SEED_ENV_VAR: &str = "PRIVSHARE_SEED";

/// One validation failure, anchored at a config key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {0} not found")]
    Missing(PathBuf),
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("invalid config:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn default_train_fraction() -> f64 {
    5.0 / 6.0
}
fn default_one() -> f64 {
    1.0
}
fn default_epochs() -> usize {
    300
}
fn default_batch() -> usize {
    200
}
fn default_max_trials() -> usize {
    200
}
fn default_strict() -> bool {
    true
}
fn default_resolution() -> usize {
    1000
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// `trainer` section of the file; mode and seed come from the top level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerSection {
    pub d_target: f64,
    pub rho: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub alpha_k: f64,
    pub alpha_g: f64,
    pub alpha_h1: f64,
    pub alpha_h2: f64,
    #[serde(default)]
    pub lr_schedule_gamma: f64,
    #[serde(default = "default_one")]
    pub d_max_for_schedule: f64,
}

/// `protocol` section of the file; mode and base seed come from the top
/// level unless `base_seed` is given explicitly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolSection {
    pub d0: f64,
    pub d_max: f64,
    pub n_points: usize,
    pub k_window: usize,
    pub trials_required: usize,
    pub base_seed: Option<u64>,
    #[serde(default = "default_max_trials")]
    pub max_trials_per_d: usize,
    #[serde(default = "default_strict")]
    pub strict_acceptance: bool,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

/// The file as written on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawConfig {
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianJointSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binary: Option<BinarySource>,
    pub n: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub seed: Option<u64>,
    pub trainer: TrainerSection,
    pub protocol: Option<ProtocolSection>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// Command-line overrides; flags win over file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub d: Option<f64>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub resolution: Option<usize>,
}

/// Fully resolved and validated run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub source: SourceSpec,
    pub data: DataSpec,
    pub trainer: TrainerConfig,
    pub protocol: Option<SweepProtocol>,
    pub output_dir: PathBuf,
}

fn validate_gaussian(src: &GaussianJointSource, violations: &mut Vec<Violation>) {
    if let Err(e) = src.validate() {
        violations.push(Violation {
            path: "gaussian.cov".into(),
            message: e.to_string(),
        });
    }
}

fn validate_binary(src: &BinarySource, violations: &mut Vec<Violation>) {
    for (key, v) in [
        ("binary.p", src.p),
        ("binary.q_y", src.q_y),
        ("binary.q_z1", src.q_z1),
        ("binary.q_z2", src.q_z2),
    ] {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            violations.push(Violation {
                path: key.into(),
                message: format!("{v} is not a probability in [0, 1]"),
            });
        }
    }
}

/// Resolves a raw file plus overrides into a validated [`RunConfig`],
/// reporting every violation at once.
pub fn resolve(raw: RawConfig, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut violations = Vec::new();
    let mode = overrides.mode.unwrap_or(raw.mode);

    let source = match (mode, &raw.gaussian, &raw.binary) {
        (Mode::Gaussian, Some(g), None) => {
            validate_gaussian(g, &mut violations);
            Some(SourceSpec::Gaussian(g.clone()))
        }
        (Mode::Binary, None, Some(b)) => {
            validate_binary(b, &mut violations);
            Some(SourceSpec::Binary(*b))
        }
        (Mode::Gaussian, None, _) => {
            violations.push(Violation {
                path: "gaussian".into(),
                message: "mode is gaussian but no gaussian source is given".into(),
            });
            None
        }
        (Mode::Binary, _, None) => {
            violations.push(Violation {
                path: "binary".into(),
                message: "mode is binary but no binary source is given".into(),
            });
            None
        }
        (Mode::Gaussian, Some(_), Some(_)) | (Mode::Binary, Some(_), Some(_)) => {
            violations.push(Violation {
                path: "binary".into(),
                message: "exactly one source section is allowed".into(),
            });
            None
        }
    };

    if raw.n < 2 {
        violations.push(Violation {
            path: "n".into(),
            message: format!("need at least 2 records, got {}", raw.n),
        });
    }
    if !(raw.train_fraction > 0.0 && raw.train_fraction < 1.0) {
        violations.push(Violation {
            path: "train_fraction".into(),
            message: format!("{} is not inside (0, 1)", raw.train_fraction),
        });
    }

    let seed = overrides.seed.or(raw.seed).or_else(|| {
        std::env::var(SEED_ENV_VAR)
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if seed.is_none() {
        violations.push(Violation {
            path: "seed".into(),
            message: format!("missing; set it in the file, via --seed, or via {SEED_ENV_VAR}"),
        });
    }

    let t = &raw.trainer;
    let d_target = overrides.d.unwrap_or(t.d_target);
    for (key, ok, msg) in [
        ("trainer.d_target", d_target >= 0.0, "must be nonnegative"),
        ("trainer.rho", t.rho > 0.0, "must be positive"),
        ("trainer.epochs", t.epochs >= 1, "must be at least 1"),
        ("trainer.batch_size", t.batch_size >= 1, "must be at least 1"),
        ("trainer.alpha_k", t.alpha_k > 0.0, "must be positive"),
        ("trainer.alpha_g", t.alpha_g > 0.0, "must be positive"),
        ("trainer.alpha_h1", t.alpha_h1 > 0.0, "must be positive"),
        ("trainer.alpha_h2", t.alpha_h2 > 0.0, "must be positive"),
        (
            "trainer.d_max_for_schedule",
            t.d_max_for_schedule > 0.0,
            "must be positive",
        ),
    ] {
        if !ok {
            violations.push(Violation {
                path: key.into(),
                message: msg.into(),
            });
        }
    }
    let train_len = (raw.n as f64 * raw.train_fraction).round() as usize;
    if train_len < t.batch_size {
        violations.push(Violation {
            path: "trainer.batch_size".into(),
            message: format!(
                "batch size {} exceeds the train split of {train_len} records",
                t.batch_size
            ),
        });
    }

    let protocol = raw.protocol.as_ref().map(|p| {
        for (key, ok, msg) in [
            (
                "protocol.d0",
                p.d0 < p.d_max,
                "d0 must be strictly below d_max",
            ),
            ("protocol.n_points", p.n_points >= 2, "must be at least 2"),
            ("protocol.k_window", p.k_window >= 1, "must be at least 1"),
            (
                "protocol.trials_required",
                p.trials_required >= 1,
                "must be at least 1",
            ),
            (
                "protocol.max_trials_per_d",
                p.max_trials_per_d >= p.trials_required,
                "must cover trials_required",
            ),
            (
                "protocol.resolution",
                p.resolution >= 2,
                "must be at least 2",
            ),
        ] {
            if !ok {
                violations.push(Violation {
                    path: key.into(),
                    message: msg.into(),
                });
            }
        }
        SweepProtocol {
            d0: p.d0,
            d_max: p.d_max,
            n_points: p.n_points,
            k_window: p.k_window,
            trials_required: p.trials_required,
            mode,
            base_seed: p.base_seed.or(seed).unwrap_or(0),
            max_trials_per_d: p.max_trials_per_d,
            strict_acceptance: p.strict_acceptance,
            resolution: overrides.resolution.unwrap_or(p.resolution),
        }
    });

    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations));
    }
    let seed = seed.expect("validated above");
    Ok(RunConfig {
        mode,
        source: source.expect("validated above"),
        data: DataSpec {
            n: raw.n,
            train_fraction: raw.train_fraction,
            seed,
        },
        trainer: TrainerConfig {
            mode,
            d_target,
            rho: t.rho,
            epochs: t.epochs,
            batch_size: t.batch_size,
            alpha_k: t.alpha_k,
            alpha_g: t.alpha_g,
            alpha_h1: t.alpha_h1,
            alpha_h2: t.alpha_h2,
            lr_schedule_gamma: t.lr_schedule_gamma,
            d_max_for_schedule: t.d_max_for_schedule,
            seed,
        },
        protocol,
        output_dir: overrides
            .output_dir
            .clone()
            .unwrap_or_else(|| raw.output_dir.clone()),
    })
}

/// Loads, overrides and validates a config file.
pub fn parse_and_validate(path: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    if !path.exists() {
        return Err(ConfigError::Missing(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let raw: RawConfig =
        serde_json::from_str(&text).map_err(|e| ConfigError::Malformed(e.to_string()))?;
    resolve(raw, overrides)
}

/// Shipped presets, usable directly or as templates.
pub mod presets {
    /// Gaussian model with the sweep capped at the covariance-implied
    /// conditional variance (5.76).
    pub const GAUSSIAN_PAPER: &str = include_str!("../presets/gaussian_paper.json");
    /// Same model with the alternative low sweep cap (0.5502) that the
    /// source experiment write-up also quotes.
    pub const GAUSSIAN_PAPER_LOW_DMAX: &str =
        include_str!("../presets/gaussian_paper_lowdmax.json");
    /// Binary single-adversary model.
    pub const BINARY_PAPER: &str = include_str!("../presets/binary_paper.json");

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "gaussian_paper" => Some(GAUSSIAN_PAPER),
            "gaussian_paper_lowdmax" => Some(GAUSSIAN_PAPER_LOW_DMAX),
            "binary_paper" => Some(BINARY_PAPER),
            _ => None,
        }
    }
}
