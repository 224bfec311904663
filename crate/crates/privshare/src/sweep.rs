//! Distortion-sweep experiment protocol.
//!
//! For each threshold on an ascending grid the harness trains fresh trials
//! until enough are accepted, where a trial is represented by the epoch
//! whose reconstruction loss sits in the qualifying window `[d - tau, d]`
//! and whose adversarial loss is the median of the last `k` qualifying
//! epochs. Acceptance demands strictly higher adversarial loss than the
//! previous finalized point, which forces a non-decreasing curve; the
//! finalized point is the accepted trial with the median adversarial loss.

use crate::binary::solve_binary;
use crate::gaussian::solve_gaussian;
use crate::sources::{sample_binary, sample_gaussian, BinarySource, Dataset, GaussianJointSource};
use crate::trainer::{train, EpochRecord, Mode, TrainError, TrainerConfig};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("analytic reference failed: {0}")]
    Analytic(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
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

/// Sweep protocol parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepProtocol {
    pub d0: f64,
    pub d_max: f64,
    pub n_points: usize,
    /// Number of trailing qualifying epochs the median is taken over.
    pub k_window: usize,
    pub trials_required: usize,
    pub mode: Mode,
    pub base_seed: u64,
    /// Runaway guard: a point is flagged short instead of looping forever.
    #[serde(default = "default_max_trials")]
    pub max_trials_per_d: usize,
    /// Strict (>) acceptance per the protocol; a non-strict (>=) variant is
    /// available for robustness studies.
    #[serde(default = "default_strict")]
    pub strict_acceptance: bool,
    /// Grid resolution of the binary analytic reference.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

impl SweepProtocol {
    /// Qualifying-window half-width `(d_max - d0) / (2 n_points)`.
    pub fn tau(&self) -> f64 {
        (self.d_max - self.d0) / (2.0 * self.n_points as f64)
    }

    pub fn d_grid(&self) -> Vec<f64> {
        (0..self.n_points)
            .map(|i| {
                self.d0 + (self.d_max - self.d0) * i as f64 / (self.n_points - 1).max(1) as f64
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if !(self.d0 < self.d_max) {
            return Err(SweepError::Protocol(format!(
                "d0 = {} must be below d_max = {}",
                self.d0, self.d_max
            )));
        }
        if self.n_points < 2 {
            return Err(SweepError::Protocol("n_points must be at least 2".into()));
        }
        if self.k_window < 1 {
            return Err(SweepError::Protocol("k_window must be at least 1".into()));
        }
        if self.trials_required < 1 {
            return Err(SweepError::Protocol(
                "trials_required must be at least 1".into(),
            ));
        }
        if self.max_trials_per_d < self.trials_required {
            return Err(SweepError::Protocol(
                "max_trials_per_d must cover trials_required".into(),
            ));
        }
        if !(self.tau() > 0.0) {
            return Err(SweepError::Protocol("tau must be positive".into()));
        }
        Ok(())
    }
}

/// One finalized point of the tradeoff curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub d: f64,
    pub recon: f64,
    pub adv1: f64,
    pub adv2: f64,
    pub theory_adv1: f64,
    pub theory_adv2: f64,
    pub trials_run: usize,
    pub seed_used: u64,
    /// Number of accepted trials still missing when the guard tripped.
    pub shortfall: usize,
}

/// A trial's selected epoch plus the seed that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedTrial {
    pub record: EpochRecord,
    pub seed: u64,
}

/// Filters epochs whose reconstruction loss lies in `[d - tau, d]`, keeps
/// the last `k`, and returns the one with the median adversarial loss
/// (smaller adversary, lower median on even counts, first among ties).
/// Fewer than `k` qualifying epochs invalidate the trial.
pub fn select_trial_epoch(
    epoch_log: &[EpochRecord],
    d: f64,
    tau: f64,
    k: usize,
) -> Option<EpochRecord> {
    let qualifying: Vec<&EpochRecord> = epoch_log
        .iter()
        .filter(|r| r.l_recon >= d - tau && r.l_recon <= d)
        .collect();
    if qualifying.len() < k || k == 0 {
        return None;
    }
    let window = &qualifying[qualifying.len() - k..];
    let mut by_adv: Vec<&&EpochRecord> = window.iter().collect();
    by_adv.sort_by(|a, b| a.adv_objective().total_cmp(&b.adv_objective()));
    Some(**by_adv[(k - 1) / 2])
}

/// Acceptance against the previous finalized point: in gaussian mode both
/// adversarial losses must improve, in binary (single-adversary) mode the
/// min-adversary objective must.
pub fn accept_trial(
    candidate: &EpochRecord,
    previous: Option<&TradeoffPoint>,
    mode: Mode,
    strict: bool,
) -> bool {
    let Some(prev) = previous else {
        return true;
    };
    let beats = |a: f64, b: f64| if strict { a > b } else { a >= b };
    match mode {
        Mode::Gaussian => beats(candidate.l_adv1, prev.adv1) && beats(candidate.l_adv2, prev.adv2),
        Mode::Binary => beats(candidate.adv_objective(), prev.adv1.min(prev.adv2)),
    }
}

fn median_trial(accepted: &[AcceptedTrial], mode: Mode) -> AcceptedTrial {
    let score = |r: &EpochRecord| match mode {
        Mode::Gaussian => (r.l_adv1 + r.l_adv2) / 2.0,
        Mode::Binary => r.adv_objective(),
    };
    let mut sorted: Vec<&AcceptedTrial> = accepted.iter().collect();
    sorted.sort_by(|a, b| score(&a.record).total_cmp(&score(&b.record)));
    // lower median; ties resolve to the earliest accepted trial
    let median_score = score(&sorted[(accepted.len() - 1) / 2].record);
    *accepted
        .iter()
        .find(|t| score(&t.record) == median_score)
        .expect("median value exists")
}

/// Median-trial finalization over exactly `trials_required` accepted trials:
/// gaussian mode ranks by the mean of the two adversarial losses, binary
/// mode by the single (min) adversarial objective.
pub fn finalize_point(
    accepted: &[AcceptedTrial],
    trials_required: usize,
    mode: Mode,
) -> Result<AcceptedTrial, SweepError> {
    if accepted.len() != trials_required {
        return Err(SweepError::Protocol(format!(
            "finalization needs exactly {trials_required} accepted trials, got {}",
            accepted.len()
        )));
    }
    Ok(median_trial(accepted, mode))
}

/// Source model handed to the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceSpec {
    Gaussian(GaussianJointSource),
    Binary(BinarySource),
}

/// Dataset generation parameters for the single sweep dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub n: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Everything produced by one sweep: the curve plus every trial's log.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<TradeoffPoint>,
    pub trials: Vec<TrialRun>,
}

/// One executed trial (accepted or not) with its full epoch log.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub d_index: usize,
    pub trial_index: usize,
    pub seed: u64,
    pub accepted: bool,
    pub diverged: bool,
    pub epoch_log: Vec<EpochRecord>,
}

fn theory_for(
    mode: Mode,
    source: &SourceSpec,
    d: f64,
    resolution: usize,
) -> Result<(f64, f64), SweepError> {
    match (mode, source) {
        (Mode::Gaussian, SourceSpec::Gaussian(src)) => {
            let sol = solve_gaussian(src, d).map_err(|e| SweepError::Analytic(e.to_string()))?;
            Ok((sol.adv_loss_1, sol.adv_loss_2))
        }
        (Mode::Binary, SourceSpec::Binary(src)) => {
            let sol =
                solve_binary(src, d, resolution).map_err(|e| SweepError::Analytic(e.to_string()))?;
            Ok((sol.gamma, sol.gamma))
        }
        _ => Err(SweepError::Protocol(
            "source model does not match the sweep mode".into(),
        )),
    }
}

/// Runs the full sweep. Trials are speculatively trained in chunks of
/// `jobs` worker threads, but selection and acceptance always proceed in
/// trial-index order, so the outcome is identical to the sequential run.
pub fn run_sweep(
    protocol: &SweepProtocol,
    source: &SourceSpec,
    data: &DataSpec,
    trainer_template: &TrainerConfig,
    jobs: usize,
) -> Result<SweepOutcome, SweepError> {
    protocol.validate()?;
    let dataset: Dataset = match source {
        SourceSpec::Gaussian(src) => sample_gaussian(src, data.n, data.train_fraction, data.seed)
            .map_err(|e| SweepError::Protocol(e.to_string()))?,
        SourceSpec::Binary(src) => sample_binary(src, data.n, data.train_fraction, data.seed)
            .map_err(|e| SweepError::Protocol(e.to_string()))?,
    };
    let jobs = jobs.max(1);
    let tau = protocol.tau();
    let mut points = Vec::with_capacity(protocol.n_points);
    let mut trials = Vec::new();
    let mut previous: Option<TradeoffPoint> = None;

    for (d_index, d) in protocol.d_grid().into_iter().enumerate() {
        let (theory_adv1, theory_adv2) = theory_for(protocol.mode, source, d, protocol.resolution)?;
        let mut accepted: Vec<AcceptedTrial> = Vec::new();
        let mut trials_run = 0;

        while accepted.len() < protocol.trials_required && trials_run < protocol.max_trials_per_d
        {
            let chunk = jobs.min(protocol.max_trials_per_d - trials_run).max(1);
            let configs: Vec<(usize, u64, TrainerConfig)> = (0..chunk)
                .map(|offset| {
                    let trial_index = trials_run + offset;
                    let seed = protocol.base_seed
                        + (d_index * protocol.max_trials_per_d + trial_index) as u64;
                    let mut cfg = trainer_template.clone();
                    cfg.mode = protocol.mode;
                    cfg.d_target = d;
                    cfg.seed = seed;
                    (trial_index, seed, cfg)
                })
                .collect();
            let results: Vec<(usize, u64, Result<Vec<EpochRecord>, TrainError>)> = if chunk == 1 {
                configs
                    .into_iter()
                    .map(|(i, seed, cfg)| (i, seed, train(&dataset, &cfg).map(|s| s.epoch_log)))
                    .collect()
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = configs
                        .into_iter()
                        .map(|(i, seed, cfg)| {
                            let dataset = &dataset;
                            scope.spawn(move || {
                                (i, seed, train(dataset, &cfg).map(|s| s.epoch_log))
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("trial thread"))
                        .collect()
                })
            };

            for (trial_index, seed, result) in results {
                trials_run += 1;
                match result {
                    Ok(epoch_log) => {
                        let candidate = select_trial_epoch(&epoch_log, d, tau, protocol.k_window);
                        let is_accepted = accepted.len() < protocol.trials_required
                            && candidate.is_some_and(|rec| {
                                accept_trial(
                                    &rec,
                                    previous.as_ref(),
                                    protocol.mode,
                                    protocol.strict_acceptance,
                                )
                            });
                        if is_accepted {
                            accepted.push(AcceptedTrial {
                                record: candidate.unwrap(),
                                seed,
                            });
                        }
                        trials.push(TrialRun {
                            d_index,
                            trial_index,
                            seed,
                            accepted: is_accepted,
                            diverged: false,
                            epoch_log,
                        });
                    }
                    Err(TrainError::Diverged { .. }) => {
                        // The protocol simply draws a fresh seed.
                        trials.push(TrialRun {
                            d_index,
                            trial_index,
                            seed,
                            accepted: false,
                            diverged: true,
                            epoch_log: Vec::new(),
                        });
                    }
                    Err(other) => return Err(other.into()),
                }
                if accepted.len() >= protocol.trials_required {
                    break;
                }
            }
        }

        let shortfall = protocol.trials_required.saturating_sub(accepted.len());
        let point = if shortfall == 0 {
            let chosen = finalize_point(&accepted, protocol.trials_required, protocol.mode)?;
            TradeoffPoint {
                d,
                recon: chosen.record.l_recon,
                adv1: chosen.record.l_adv1,
                adv2: chosen.record.l_adv2,
                theory_adv1,
                theory_adv2,
                trials_run,
                seed_used: chosen.seed,
                shortfall: 0,
            }
        } else if accepted.is_empty() {
            TradeoffPoint {
                d,
                recon: f64::NAN,
                adv1: f64::NAN,
                adv2: f64::NAN,
                theory_adv1,
                theory_adv2,
                trials_run,
                seed_used: 0,
                shortfall,
            }
        } else {
            // Short but non-empty: finalize over what exists, flagged.
            let chosen = median_trial(&accepted, protocol.mode);
            TradeoffPoint {
                d,
                recon: chosen.record.l_recon,
                adv1: chosen.record.l_adv1,
                adv2: chosen.record.l_adv2,
                theory_adv1,
                theory_adv2,
                trials_run,
                seed_used: chosen.seed,
                shortfall,
            }
        };
        if point.recon.is_finite() {
            previous = Some(point);
        }
        points.push(point);
    }

    debug_assert!(curve_is_monotone(&points, protocol.mode));
    Ok(SweepOutcome { points, trials })
}

/// Post-hoc check of the acceptance construction: adversarial-loss columns
/// never decrease along finalized (non-short) points.
pub fn curve_is_monotone(points: &[TradeoffPoint], mode: Mode) -> bool {
    let finalized: Vec<&TradeoffPoint> = points.iter().filter(|p| p.shortfall == 0).collect();
    finalized.windows(2).all(|w| match mode {
        Mode::Gaussian => w[1].adv1 >= w[0].adv1 && w[1].adv2 >= w[0].adv2,
        Mode::Binary => w[1].adv1.min(w[1].adv2) >= w[0].adv1.min(w[0].adv2),
    })
}

/// Writes the curve as CSV:
/// `d,recon,adv1,adv2,theory_adv1,theory_adv2,trials_run,shortfall`.
pub fn emit_curve<W: Write>(points: &[TradeoffPoint], mut w: W) -> Result<(), SweepError> {
    if points.is_empty() {
        return Err(SweepError::Protocol("empty curve".into()));
    }
    writeln!(
        w,
        "d,recon,adv1,adv2,theory_adv1,theory_adv2,trials_run,shortfall"
    )?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.d, p.recon, p.adv1, p.adv2, p.theory_adv1, p.theory_adv2, p.trials_run, p.shortfall
        )?;
    }
    Ok(())
}

/// Parses a curve back from [`emit_curve`] output.
pub fn parse_curve(text: &str) -> Result<Vec<TradeoffPoint>, SweepError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SweepError::Protocol("empty curve file".into()))?;
    if header != "d,recon,adv1,adv2,theory_adv1,theory_adv2,trials_run,shortfall" {
        return Err(SweepError::Protocol(format!("unexpected header: {header}")));
    }
    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(SweepError::Protocol(format!(
                "line {}: expected 8 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64, SweepError> {
            s.parse()
                .map_err(|e| SweepError::Protocol(format!("line {}: {e}", lineno + 2)))
        };
        points.push(TradeoffPoint {
            d: num(fields[0])?,
            recon: num(fields[1])?,
            adv1: num(fields[2])?,
            adv2: num(fields[3])?,
            theory_adv1: num(fields[4])?,
            theory_adv2: num(fields[5])?,
            trials_run: fields[6]
                .parse()
                .map_err(|e| SweepError::Protocol(format!("line {}: {e}", lineno + 2)))?,
            seed_used: 0,
            shortfall: fields[7]
                .parse()
                .map_err(|e| SweepError::Protocol(format!("line {}: {e}", lineno + 2)))?,
        });
    }
    Ok(points)
}

/// Sidecar metadata: everything needed to re-run the sweep exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepMeta {
    pub protocol: SweepProtocol,
    pub source: SourceSpec,
    pub data: DataSpec,
    pub trainer: TrainerConfig,
    pub jobs: usize,
    pub point_seeds: Vec<u64>,
}

/// Writes `curve.csv`, `meta.json` and per-trial epoch logs under `trials/`.
pub fn write_sweep_outputs(
    outcome: &SweepOutcome,
    meta: &SweepMeta,
    dir: &Path,
) -> Result<(), SweepError> {
    std::fs::create_dir_all(dir)?;
    let mut curve = Vec::new();
    emit_curve(&outcome.points, &mut curve)?;
    std::fs::write(dir.join("curve.csv"), curve)?;
    let meta_json =
        serde_json::to_vec_pretty(meta).map_err(|e| SweepError::Protocol(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), meta_json)?;
    let trials_dir = dir.join("trials");
    std::fs::create_dir_all(&trials_dir)?;
    for trial in &outcome.trials {
        let name = format!(
            "d{:02}_trial{:03}_epoch_log.csv",
            trial.d_index, trial.trial_index
        );
        let mut buf = String::from("epoch,l_recon,l_adv1,l_adv2\n");
        for rec in &trial.epoch_log {
            buf.push_str(&format!(
                "{},{},{},{}\n",
                rec.epoch, rec.l_recon, rec.l_adv1, rec.l_adv2
            ));
        }
        std::fs::write(trials_dir.join(name), buf)?;
    }
    Ok(())
}
