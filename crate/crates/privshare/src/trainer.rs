//! Alternating minimax training of privatizer, reconstructor and two
//! adversaries.
//!
//! Each epoch runs three phases in order, each on its own fresh mini-batch:
//! the privatizer updates against the frozen estimators using the symmetric
//! distortion penalty, then the reconstructor updates against the frozen
//! privatizer, then each adversary does the same. In binary mode the
//! privatizer emits a probability `p_hat` from which the released bit is
//! sampled by thresholding the record's stored uniform noise, and during the
//! privatizer phase the reconstructor consumes `p_hat` directly so gradients
//! can flow; the adversaries always consume the sampled bit.

use crate::neuralkit::{
    compare_gradients, numerical_gradient, GradCheckReport, Head, MlpNet,
    NeuralError, OptimizerKind, OptimizerState, N_PARAMS,
};
use crate::sources::{Dataset, Record};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// L2 norm ceiling applied to every parameter-gradient vector before an
/// optimizer step; stabilizes the large-penalty regime.
pub const GRAD_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch} during the {phase} phase")]
    Diverged { epoch: usize, phase: Phase },
    #[error("argument error: {0}")]
    Argument(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Data model the trainer runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gaussian,
    Binary,
}

impl Mode {
    pub fn head(self) -> Head {
        match self {
            Mode::Gaussian => Head::Identity,
            Mode::Binary => Head::Sigmoid,
        }
    }

    pub fn optimizer(self) -> OptimizerKind {
        match self {
            Mode::Gaussian => OptimizerKind::Adam,
            Mode::Binary => OptimizerKind::RAdam,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Gaussian => "gaussian",
            Mode::Binary => "binary",
        })
    }
}

/// Phase of the alternating loop, for divergence reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Privatizer,
    Reconstructor,
    Adversary1,
    Adversary2,
    Evaluation,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Privatizer => "privatizer",
            Phase::Reconstructor => "reconstructor",
            Phase::Adversary1 => "adversary1",
            Phase::Adversary2 => "adversary2",
            Phase::Evaluation => "evaluation",
        })
    }
}

fn default_schedule_gamma() -> f64 {
    0.0
}
fn default_schedule_dmax() -> f64 {
    1.0
}

/// Full hyperparameter block for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub mode: Mode,
    /// Distortion threshold the reconstructor loss is driven toward.
    pub d_target: f64,
    /// Penalty weight of the symmetric distortion term.
    pub rho: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rates per component (privatizer, reconstructor,
    /// adversary 1, adversary 2). The distortion schedule scales all four.
    pub alpha_k: f64,
    pub alpha_g: f64,
    pub alpha_h1: f64,
    pub alpha_h2: f64,
    /// Slope of the privatizer's distortion-dependent learning-rate
    /// schedule `alpha_k * (1 + gamma * d_target / d_max)`; zero disables
    /// it. The estimators keep their base rates so they can reach the
    /// optimal decision rules at every threshold.
    #[serde(default = "default_schedule_gamma")]
    pub lr_schedule_gamma: f64,
    #[serde(default = "default_schedule_dmax")]
    pub d_max_for_schedule: f64,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.rho > 0.0) {
            return Err(TrainError::Config(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.d_target >= 0.0) {
            return Err(TrainError::Config(format!(
                "d_target must be nonnegative, got {}",
                self.d_target
            )));
        }
        for (name, lr) in [
            ("alpha_k", self.alpha_k),
            ("alpha_g", self.alpha_g),
            ("alpha_h1", self.alpha_h1),
            ("alpha_h2", self.alpha_h2),
        ] {
            if !(lr > 0.0) {
                return Err(TrainError::Config(format!(
                    "{name} must be positive, got {lr}"
                )));
            }
        }
        if self.mode == Mode::Binary && !(self.d_max_for_schedule > 0.0) {
            return Err(TrainError::Config(
                "d_max_for_schedule must be positive in binary mode".into(),
            ));
        }
        if !(self.schedule_factor() > 0.0) {
            return Err(TrainError::Config(format!(
                "learning-rate schedule factor is not positive at d = {}",
                self.d_target
            )));
        }
        Ok(())
    }

    /// Distortion-dependent multiplier applied to the privatizer rate.
    pub fn schedule_factor(&self) -> f64 {
        1.0 + self.lr_schedule_gamma * self.d_target / self.d_max_for_schedule
    }
}

/// One network together with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedComponent {
    pub net: MlpNet,
    pub opt: OptimizerState,
}

impl TrainedComponent {
    pub fn new(seed: u64, head: Head, kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            net: MlpNet::init(seed, head),
            opt: OptimizerState::new(kind, learning_rate, N_PARAMS),
        }
    }

    fn apply(&mut self, mut grads: Vec<f64>) -> Result<(), NeuralError> {
        clip_norm(&mut grads, GRAD_CLIP_NORM);
        self.opt.step(self.net.params_mut(), &grads)
    }
}

fn clip_norm(grads: &mut [f64], max_norm: f64) {
    // Scaled two-pass norm so huge-but-finite gradients don't overflow the
    // sum of squares; non-finite gradients pass through for the optimizer
    // to report.
    let max_abs = grads.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if max_abs == 0.0 || !max_abs.is_finite() {
        return;
    }
    let norm = max_abs
        * grads
            .iter()
            .map(|g| (g / max_abs) * (g / max_abs))
            .sum::<f64>()
            .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

/// Test-split losses after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_recon: f64,
    pub l_adv1: f64,
    pub l_adv2: f64,
}

impl EpochRecord {
    /// The adversarial objective of this epoch: the smaller adversary loss.
    pub fn adv_objective(&self) -> f64 {
        self.l_adv1.min(self.l_adv2)
    }
}

/// Everything a finished run carries.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub privatizer: TrainedComponent,
    pub reconstructor: TrainedComponent,
    pub adversary1: TrainedComponent,
    pub adversary2: TrainedComponent,
    pub epoch_log: Vec<EpochRecord>,
}

/// Sanitized value released for one record; binary mode also carries the
/// probability it was sampled from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Privatized {
    pub f: f64,
    pub p_hat: Option<f64>,
}

/// Runs the privatizer on one record. Binary mode samples the released bit
/// by thresholding the record's stored uniform noise against `p_hat`, so the
/// release is a deterministic function of `(x, r)` and the parameters.
pub fn privatize(
    privatizer: &MlpNet,
    x: f64,
    r: f64,
    mode: Mode,
) -> Result<Privatized, TrainError> {
    if privatizer.head != mode.head() {
        return Err(TrainError::Config(format!(
            "privatizer head {:?} does not match {mode} mode",
            privatizer.head
        )));
    }
    let out = privatizer.value([x, r]);
    Ok(match mode {
        Mode::Gaussian => Privatized { f: out, p_hat: None },
        Mode::Binary => Privatized {
            f: if r < out { 1.0 } else { 0.0 },
            p_hat: Some(out),
        },
    })
}

/// Mean squared error.
pub fn recon_loss_mse(x_hat: &[f64], x: &[f64]) -> Result<f64, TrainError> {
    if x_hat.is_empty() {
        return Err(TrainError::Argument("empty batch".into()));
    }
    if x_hat.len() != x.len() {
        return Err(TrainError::Argument(format!(
            "length mismatch: {} estimates vs {} targets",
            x_hat.len(),
            x.len()
        )));
    }
    let m = x_hat.len() as f64;
    Ok(x_hat
        .iter()
        .zip(x)
        .map(|(xh, xv)| (xh - xv) * (xh - xv))
        .sum::<f64>()
        / m)
}

/// Soft 0-1 loss `mean(x (1 - est) + (1 - x) est)`; equals the
/// misclassification rate when the estimates are hard bits.
pub fn loss_01(estimates: &[f64], x: &[f64]) -> Result<f64, TrainError> {
    if estimates.is_empty() {
        return Err(TrainError::Argument("empty batch".into()));
    }
    if estimates.len() != x.len() {
        return Err(TrainError::Argument(format!(
            "length mismatch: {} estimates vs {} targets",
            estimates.len(),
            x.len()
        )));
    }
    if let Some(e) = estimates.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(TrainError::Argument(format!(
            "estimate {e} lies outside [0, 1]"
        )));
    }
    let m = estimates.len() as f64;
    Ok(estimates
        .iter()
        .zip(x)
        .map(|(e, xv)| xv * (1.0 - e) + (1.0 - xv) * e)
        .sum::<f64>()
        / m)
}

/// The privatizer's composite objective:
/// `-min(adv losses) + (rho/2)((recon - d)^+ + (d - recon)^+)`.
pub fn privatizer_objective(l_adv1: f64, l_adv2: f64, l_recon: f64, d: f64, rho: f64) -> f64 {
    let plus = |u: f64| u.max(0.0);
    -l_adv1.min(l_adv2) + (rho / 2.0) * (plus(l_recon - d) + plus(d - l_recon))
}

/// During the privatizer phase the reconstructor consumes the probability
/// while the adversaries consume the sampled bit; in every other phase both
/// consume the sampled bit.
pub fn binary_privatizer_phase_inputs(p_hat: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (p_hat.to_vec(), f.to_vec())
}

fn per_sample_loss_grad(mode: Mode, estimate: f64, x: f64, m: f64) -> f64 {
    match mode {
        Mode::Gaussian => 2.0 * (estimate - x) / m,
        Mode::Binary => (1.0 - 2.0 * x) / m,
    }
}

fn batch_loss(mode: Mode, estimates: &[f64], x: &[f64]) -> Result<f64, TrainError> {
    match mode {
        Mode::Gaussian => recon_loss_mse(estimates, x),
        Mode::Binary => loss_01(estimates, x),
    }
}

/// Analytic parameter gradient of the composite objective with respect to
/// the privatizer, with the estimators frozen. Returns the gradient vector,
/// the objective value, and the three component losses.
#[allow(clippy::too_many_arguments)]
fn privatizer_gradient(
    privatizer: &MlpNet,
    reconstructor: &MlpNet,
    adversary1: &MlpNet,
    adversary2: &MlpNet,
    batch: &[Record],
    mode: Mode,
    d: f64,
    rho: f64,
) -> Result<(Vec<f64>, f64, [f64; 3]), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Argument("empty batch".into()));
    }
    let m = batch.len() as f64;
    let xs: Vec<f64> = batch.iter().map(|r| r.x).collect();
    let released: Vec<Privatized> = batch
        .iter()
        .map(|rec| privatize(privatizer, rec.x, rec.r, mode))
        .collect::<Result<_, _>>()?;

    // In binary mode the reconstructor sees p_hat, the adversaries see f.
    let recon_feed: Vec<f64> = match mode {
        Mode::Gaussian => released.iter().map(|p| p.f).collect(),
        Mode::Binary => {
            let p_hat: Vec<f64> = released.iter().map(|p| p.p_hat.unwrap()).collect();
            let f: Vec<f64> = released.iter().map(|p| p.f).collect();
            binary_privatizer_phase_inputs(&p_hat, &f).0
        }
    };
    let adv_feed: Vec<f64> = released.iter().map(|p| p.f).collect();

    let recon_inputs: Vec<[f64; 2]> = recon_feed
        .iter()
        .zip(batch)
        .map(|(&f, rec)| [f, rec.y])
        .collect();
    let x_hat: Vec<f64> = recon_inputs
        .iter()
        .map(|i| reconstructor.value(*i))
        .collect();
    let l_recon = batch_loss(mode, &x_hat, &xs)?;

    let build_adv_inputs = |side: fn(&Record) -> f64| -> Vec<[f64; 2]> {
        adv_feed
            .iter()
            .zip(batch)
            .map(|(&f, rec)| [f, side(rec)])
            .collect()
    };
    let adv1_inputs = build_adv_inputs(|r| r.z1);
    let adv2_inputs = build_adv_inputs(|r| r.z2);
    let x_tilde_1: Vec<f64> = adv1_inputs.iter().map(|i| adversary1.value(*i)).collect();
    let x_tilde_2: Vec<f64> = adv2_inputs.iter().map(|i| adversary2.value(*i)).collect();
    let l_adv1 = batch_loss(mode, &x_tilde_1, &xs)?;
    let l_adv2 = batch_loss(mode, &x_tilde_2, &xs)?;

    let l_priv = privatizer_objective(l_adv1, l_adv2, l_recon, d, rho);

    // d l_priv / d l_recon: symmetric-penalty subgradient (0 exactly on target).
    let pen = if l_recon == d {
        0.0
    } else {
        (rho / 2.0) * (l_recon - d).signum()
    };

    // Reconstructor branch: gradient flows into the privatizer through the
    // reconstructor's first input (f, or p_hat in binary mode).
    let recon_upstreams: Vec<([f64; 2], f64)> = recon_inputs
        .iter()
        .zip(&x_hat)
        .zip(&xs)
        .map(|((inp, &xh), &xv)| (*inp, pen * per_sample_loss_grad(mode, xh, xv, m)))
        .collect();
    let recon_pass = reconstructor.backward(&recon_upstreams)?;

    // Adversarial branch: the subgradient of the min flows through the
    // smaller loss only, ties toward adversary 1. In binary mode the
    // adversaries consume the sampled bit, whose sensitivity to p_hat is
    // taken as 1 (straight-through).
    let mut release_grads: Vec<f64> = recon_pass.input_grads.iter().map(|g| g[0]).collect();
    {
        let (net, inputs, x_tilde) = if l_adv1 <= l_adv2 {
            (adversary1, &adv1_inputs, &x_tilde_1)
        } else {
            (adversary2, &adv2_inputs, &x_tilde_2)
        };
        let adv_upstreams: Vec<([f64; 2], f64)> = inputs
            .iter()
            .zip(x_tilde)
            .zip(&xs)
            .map(|((inp, &xt), &xv)| (*inp, -per_sample_loss_grad(mode, xt, xv, m)))
            .collect();
        let adv_pass = net.backward(&adv_upstreams)?;
        for (g, a) in release_grads.iter_mut().zip(&adv_pass.input_grads) {
            *g += a[0];
        }
    }

    let k_batch: Vec<([f64; 2], f64)> = batch
        .iter()
        .zip(&release_grads)
        .map(|(rec, &up)| ([rec.x, rec.r], up))
        .collect();
    let k_pass = privatizer.backward(&k_batch)?;
    Ok((k_pass.grads, l_priv, [l_recon, l_adv1, l_adv2]))
}

/// Privatizer update phase: one gradient step on the composite objective
/// with all three estimators frozen. Returns the objective value.
#[allow(clippy::too_many_arguments)]
pub fn privatizer_phase(
    privatizer: &mut TrainedComponent,
    reconstructor: &MlpNet,
    adversary1: &MlpNet,
    adversary2: &MlpNet,
    batch: &[Record],
    mode: Mode,
    d: f64,
    rho: f64,
) -> Result<f64, TrainError> {
    let (grads, l_priv, _) = privatizer_gradient(
        &privatizer.net,
        reconstructor,
        adversary1,
        adversary2,
        batch,
        mode,
        d,
        rho,
    )?;
    privatizer.apply(grads)?;
    Ok(l_priv)
}

/// Reconstructor update phase against the frozen privatizer. Returns the
/// batch reconstruction loss.
pub fn reconstructor_phase(
    privatizer: &MlpNet,
    reconstructor: &mut TrainedComponent,
    batch: &[Record],
    mode: Mode,
) -> Result<f64, TrainError> {
    estimator_phase(privatizer, reconstructor, batch, mode, |r| r.y)
}

/// Which adversary an adversary phase trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarySide {
    First,
    Second,
}

/// Adversary update phase against the frozen privatizer. Returns the batch
/// adversarial loss.
pub fn adversary_phase(
    privatizer: &MlpNet,
    adversary: &mut TrainedComponent,
    batch: &[Record],
    mode: Mode,
    side: AdversarySide,
) -> Result<f64, TrainError> {
    match side {
        AdversarySide::First => estimator_phase(privatizer, adversary, batch, mode, |r| r.z1),
        AdversarySide::Second => estimator_phase(privatizer, adversary, batch, mode, |r| r.z2),
    }
}

fn estimator_phase(
    privatizer: &MlpNet,
    estimator: &mut TrainedComponent,
    batch: &[Record],
    mode: Mode,
    side: fn(&Record) -> f64,
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Argument("empty batch".into()));
    }
    let m = batch.len() as f64;
    let xs: Vec<f64> = batch.iter().map(|r| r.x).collect();
    let inputs: Vec<[f64; 2]> = batch
        .iter()
        .map(|rec| privatize(privatizer, rec.x, rec.r, mode).map(|p| [p.f, side(rec)]))
        .collect::<Result<_, _>>()?;
    let estimates: Vec<f64> = inputs.iter().map(|i| estimator.net.value(*i)).collect();
    let loss = batch_loss(mode, &estimates, &xs)?;
    let upstreams: Vec<([f64; 2], f64)> = inputs
        .iter()
        .zip(&estimates)
        .zip(&xs)
        .map(|((inp, &e), &xv)| (*inp, per_sample_loss_grad(mode, e, xv, m)))
        .collect();
    let pass = estimator.net.backward(&upstreams)?;
    estimator.apply(pass.grads)?;
    Ok(loss)
}

/// Test-split losses of the current parameter snapshot.
pub fn evaluate(
    privatizer: &MlpNet,
    reconstructor: &MlpNet,
    adversary1: &MlpNet,
    adversary2: &MlpNet,
    records: &[Record],
    mode: Mode,
) -> Result<(f64, f64, f64), TrainError> {
    if records.is_empty() {
        return Err(TrainError::Argument("empty evaluation split".into()));
    }
    let xs: Vec<f64> = records.iter().map(|r| r.x).collect();
    let mut x_hat = Vec::with_capacity(records.len());
    let mut x_t1 = Vec::with_capacity(records.len());
    let mut x_t2 = Vec::with_capacity(records.len());
    for rec in records {
        let released = privatize(privatizer, rec.x, rec.r, mode)?;
        x_hat.push(reconstructor.value([released.f, rec.y]));
        x_t1.push(adversary1.value([released.f, rec.z1]));
        x_t2.push(adversary2.value([released.f, rec.z2]));
    }
    Ok((
        batch_loss(mode, &x_hat, &xs)?,
        batch_loss(mode, &x_t1, &xs)?,
        batch_loss(mode, &x_t2, &xs)?,
    ))
}

fn sample_batch(rng: &mut ChaCha8Rng, pool: &[Record], m: usize) -> Vec<Record> {
    rand::seq::index::sample(rng, pool.len(), m)
        .iter()
        .map(|i| pool[i])
        .collect()
}

/// Runs the full alternating loop for `config.epochs` epochs and logs the
/// test-split losses after each one. Deterministic given the config seed.
pub fn train(dataset: &Dataset, config: &TrainerConfig) -> Result<TrainerState, TrainError> {
    config.validate()?;
    let train_split = dataset.train();
    let test_split = dataset.test();
    if train_split.len() < config.batch_size {
        return Err(TrainError::Config(format!(
            "train split has {} records, need at least batch_size = {}",
            train_split.len(),
            config.batch_size
        )));
    }
    if test_split.is_empty() {
        return Err(TrainError::Config("test split is empty".into()));
    }

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let head = config.mode.head();
    let kind = config.mode.optimizer();
    let sched = config.schedule_factor();
    let mut privatizer =
        TrainedComponent::new(master.next_u64(), head, kind, config.alpha_k * sched);
    if config.mode == Mode::Binary {
        // Stabilization: zero the privatizer's output layer so the initial
        // release is an unbiased coin (p_hat = 1/2, independent of x). The
        // penalty then introduces exactly the leak the constraint demands
        // instead of having to undo a random initial leak.
        for p in privatizer.net.params_mut()[150..].iter_mut() {
            *p = 0.0;
        }
    }
    let mut reconstructor =
        TrainedComponent::new(master.next_u64(), head, kind, config.alpha_g);
    let mut adversary1 =
        TrainedComponent::new(master.next_u64(), head, kind, config.alpha_h1);
    let mut adversary2 =
        TrainedComponent::new(master.next_u64(), head, kind, config.alpha_h2);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(master.next_u64());

    let mut epoch_log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let batch = sample_batch(&mut batch_rng, train_split, config.batch_size);
        let l_priv = privatizer_phase(
            &mut privatizer,
            &reconstructor.net,
            &adversary1.net,
            &adversary2.net,
            &batch,
            config.mode,
            config.d_target,
            config.rho,
        )
        .map_err(|_| TrainError::Diverged {
            epoch,
            phase: Phase::Privatizer,
        })?;
        if !l_priv.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                phase: Phase::Privatizer,
            });
        }

        let batch = sample_batch(&mut batch_rng, train_split, config.batch_size);
        let l_recon = reconstructor_phase(&privatizer.net, &mut reconstructor, &batch, config.mode)
            .map_err(|_| TrainError::Diverged {
                epoch,
                phase: Phase::Reconstructor,
            })?;
        if !l_recon.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                phase: Phase::Reconstructor,
            });
        }

        for (side, phase) in [
            (AdversarySide::First, Phase::Adversary1),
            (AdversarySide::Second, Phase::Adversary2),
        ] {
            let adversary = match side {
                AdversarySide::First => &mut adversary1,
                AdversarySide::Second => &mut adversary2,
            };
            let batch = sample_batch(&mut batch_rng, train_split, config.batch_size);
            let l = adversary_phase(&privatizer.net, adversary, &batch, config.mode, side)
                .map_err(|_| TrainError::Diverged { epoch, phase })?;
            if !l.is_finite() {
                return Err(TrainError::Diverged { epoch, phase });
            }
        }

        let (l_recon, l_adv1, l_adv2) = evaluate(
            &privatizer.net,
            &reconstructor.net,
            &adversary1.net,
            &adversary2.net,
            test_split,
            config.mode,
        )
        .map_err(|_| TrainError::Diverged {
            epoch,
            phase: Phase::Evaluation,
        })?;
        if !(l_recon.is_finite() && l_adv1.is_finite() && l_adv2.is_finite()) {
            return Err(TrainError::Diverged {
                epoch,
                phase: Phase::Evaluation,
            });
        }
        epoch_log.push(EpochRecord {
            epoch,
            l_recon,
            l_adv1,
            l_adv2,
        });
    }

    Ok(TrainerState {
        privatizer,
        reconstructor,
        adversary1,
        adversary2,
        epoch_log,
    })
}

/// Finite-difference verification of the composite-objective gradient with
/// respect to the privatizer parameters, through the substitution path in
/// binary mode (the sampled bits are held fixed while the probability path
/// is re-evaluated).
#[allow(clippy::too_many_arguments)]
pub fn check_privatizer_gradients(
    privatizer: &MlpNet,
    reconstructor: &MlpNet,
    adversary1: &MlpNet,
    adversary2: &MlpNet,
    batch: &[Record],
    mode: Mode,
    d: f64,
    rho: f64,
    tolerance: f64,
) -> Result<GradCheckReport, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Argument("empty batch".into()));
    }
    let (analytic, _, _) = privatizer_gradient(
        privatizer,
        reconstructor,
        adversary1,
        adversary2,
        batch,
        mode,
        d,
        rho,
    )?;

    let xs: Vec<f64> = batch.iter().map(|r| r.x).collect();
    // Reference release: in binary mode the sampled bits stay frozen so the
    // numeric probe differentiates exactly the path the analytic gradient
    // models.
    let frozen_f: Vec<f64> = batch
        .iter()
        .map(|rec| privatize(privatizer, rec.x, rec.r, mode).map(|p| p.f))
        .collect::<Result<_, _>>()?;

    let objective = |params: &[f64]| -> f64 {
        let probe = MlpNet::from_params(params.to_vec(), privatizer.head, 0).expect("same shape");
        let m = batch.len() as f64;
        let mut x_hat = Vec::with_capacity(batch.len());
        let mut x_t1 = Vec::with_capacity(batch.len());
        let mut x_t2 = Vec::with_capacity(batch.len());
        for (j, rec) in batch.iter().enumerate() {
            let out = probe.value([rec.x, rec.r]);
            let adv_feed = match mode {
                Mode::Gaussian => out,
                Mode::Binary => frozen_f[j],
            };
            // `out` is f in Gaussian mode and the substituted p_hat in binary mode
            x_hat.push(reconstructor.value([out, rec.y]));
            x_t1.push(adversary1.value([adv_feed, rec.z1]));
            x_t2.push(adversary2.value([adv_feed, rec.z2]));
        }
        let term = |ests: &[f64]| -> f64 {
            ests.iter()
                .zip(&xs)
                .map(|(&e, &x)| match mode {
                    Mode::Gaussian => (e - x) * (e - x),
                    Mode::Binary => x * (1.0 - e) + (1.0 - x) * e,
                })
                .sum::<f64>()
                / m
        };
        privatizer_objective(term(&x_t1), term(&x_t2), term(&x_hat), d, rho)
    };
    let numeric = numerical_gradient(privatizer.params(), objective, 1e-5);
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::{sample_binary, sample_gaussian, BinarySource, GaussianJointSource};
    use rand::Rng;

    fn gaussian_dataset(n: usize, seed: u64) -> Dataset {
        sample_gaussian(&GaussianJointSource::paper_preset(), n, 5.0 / 6.0, seed).unwrap()
    }

    fn binary_dataset(n: usize, seed: u64) -> Dataset {
        sample_binary(&BinarySource::paper_preset(), n, 5.0 / 6.0, seed).unwrap()
    }

    fn gaussian_config(d: f64, epochs: usize, seed: u64) -> TrainerConfig {
        TrainerConfig {
            mode: Mode::Gaussian,
            d_target: d,
            rho: 1000.0,
            epochs,
            batch_size: 200,
            alpha_k: 0.001,
            alpha_g: 0.001,
            alpha_h1: 0.001,
            alpha_h2: 0.001,
            lr_schedule_gamma: 0.0,
            d_max_for_schedule: 1.0,
            seed,
        }
    }

    fn binary_config(d: f64, epochs: usize, seed: u64) -> TrainerConfig {
        TrainerConfig {
            mode: Mode::Binary,
            d_target: d,
            rho: 1.0,
            epochs,
            batch_size: 200,
            alpha_k: 0.05,
            alpha_g: 0.02,
            alpha_h1: 0.01,
            alpha_h2: 0.01,
            lr_schedule_gamma: -0.98,
            d_max_for_schedule: 0.2,
            seed,
        }
    }

    /// Privatizer whose sigmoid output is (numerically) the input bit.
    fn passthrough_binary_privatizer() -> MlpNet {
        let mut params = vec![0.0; N_PARAMS];
        params[0] = 1.0; // hidden 0 = relu(x) = x for x in {0, 1}
        params[150] = 40.0;
        params[200] = -20.0; // sigmoid(40 x - 20)
        MlpNet::from_params(params, Head::Sigmoid, 0).unwrap()
    }

    /// Privatizer that releases the noise coordinate unchanged: f = r.
    fn noise_only_gaussian_privatizer() -> MlpNet {
        let mut params = vec![0.0; N_PARAMS];
        params[1] = 1.0; // hidden 0 = relu(r)
        params[3] = -1.0; // hidden 1 = relu(-r)
        params[150] = 1.0;
        params[151] = -1.0; // f = relu(r) - relu(-r) = r
        MlpNet::from_params(params, Head::Identity, 0).unwrap()
    }

    #[test]
    fn privatize_respects_mode_and_head() {
        let k = passthrough_binary_privatizer();
        assert!(privatize(&k, 1.0, 0.5, Mode::Gaussian).is_err());
        let p = privatize(&k, 1.0, 0.5, Mode::Binary).unwrap();
        assert_eq!(p.f, 1.0);
        assert!(p.p_hat.unwrap() > 0.999);
        let p = privatize(&k, 0.0, 0.5, Mode::Binary).unwrap();
        assert_eq!(p.f, 0.0);

        let zero = MlpNet::from_params(vec![0.0; N_PARAMS], Head::Identity, 0).unwrap();
        let p = privatize(&zero, 3.0, -1.5, Mode::Gaussian).unwrap();
        assert_eq!(p.f, 0.0);
        assert!(p.p_hat.is_none());
    }

    #[test]
    fn binary_release_follows_extreme_probabilities() {
        // p_hat saturated high releases 1 for every threshold draw, and
        // saturated low releases 0.
        let mut hi = vec![0.0; N_PARAMS];
        hi[200] = 1e9;
        let hi = MlpNet::from_params(hi, Head::Sigmoid, 0).unwrap();
        let mut lo = vec![0.0; N_PARAMS];
        lo[200] = -1e9;
        let lo = MlpNet::from_params(lo, Head::Sigmoid, 0).unwrap();
        for r in [1e-9, 0.25, 0.5, 0.9999] {
            assert_eq!(privatize(&hi, 0.0, r, Mode::Binary).unwrap().f, 1.0);
            assert_eq!(privatize(&lo, 1.0, r, Mode::Binary).unwrap().f, 0.0);
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(recon_loss_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(recon_loss_mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(recon_loss_mse(&[], &[]).is_err());
        assert!(recon_loss_mse(&[1.0], &[1.0, 2.0]).is_err());

        // independent reversed-order accumulation over a random batch
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let a: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..3.0)).collect();
        let direct = recon_loss_mse(&a, &b).unwrap();
        let mut reversed = 0.0;
        for i in (0..200).rev() {
            reversed += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert!((direct - reversed / 200.0).abs() < 1e-12);
    }

    #[test]
    fn soft_01_examples() {
        assert_eq!(loss_01(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(loss_01(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap(), 0.5);
        let l = loss_01(&[0.9, 0.2, 0.6, 0.1], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((l - 0.2).abs() < 1e-12, "loss = {l}");
        assert!(loss_01(&[1.2], &[1.0]).is_err());
        assert!(loss_01(&[], &[]).is_err());
    }

    #[test]
    fn objective_matches_absolute_value_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let l1 = rng.random_range(0.0..20.0);
            let l2 = rng.random_range(0.0..20.0);
            let lr = rng.random_range(0.0..20.0);
            let d = rng.random_range(0.0..20.0);
            let rho = rng.random_range(0.01..2000.0);
            let lhs = privatizer_objective(l1, l2, lr, d, rho);
            let rhs = -l1.min(l2) + (rho / 2.0) * (lr - d).abs();
            assert!((lhs - rhs).abs() <= 1e-15 * (1.0 + lhs.abs() + rhs.abs()));
        }
        // zero penalty on target, unit case
        assert_eq!(privatizer_objective(1.0, 1.0, 0.3, 0.3, 7.0), -1.0);
        // slope rho/2 per unit of |l_recon - d| (dyadic values, exact floats)
        let base = privatizer_objective(2.0, 3.0, 0.5, 0.5, 8.0);
        assert_eq!(privatizer_objective(2.0, 3.0, 0.75, 0.5, 8.0), base + 1.0);
        // symmetric in the deviation
        assert_eq!(
            privatizer_objective(2.0, 3.0, 0.75, 0.5, 8.0),
            privatizer_objective(2.0, 3.0, 0.25, 0.5, 8.0)
        );
    }

    #[test]
    fn substitution_inputs_split_probability_and_bit() {
        let p_hat = [1.0, 0.0, 1.0];
        let f = [1.0, 0.0, 1.0];
        let (recon, adv) = binary_privatizer_phase_inputs(&p_hat, &f);
        assert_eq!(recon, adv);
        let p_hat = [0.5, 0.5];
        let f = [1.0, 0.0];
        let (recon, adv) = binary_privatizer_phase_inputs(&p_hat, &f);
        assert_eq!(recon, vec![0.5, 0.5]);
        assert_eq!(adv, vec![1.0, 0.0]);
    }

    #[test]
    fn phase_isolation_freezes_unrelated_components() {
        let ds = gaussian_dataset(600, 41);
        let mode = Mode::Gaussian;
        let mut k = TrainedComponent::new(1, mode.head(), mode.optimizer(), 0.001);
        let mut g = TrainedComponent::new(2, mode.head(), mode.optimizer(), 0.001);
        let mut h1 = TrainedComponent::new(3, mode.head(), mode.optimizer(), 0.001);
        let h2 = TrainedComponent::new(4, mode.head(), mode.optimizer(), 0.001);
        let batch: Vec<Record> = ds.train()[..200].to_vec();

        let (g0, h10, h20) = (g.clone(), h1.clone(), h2.clone());
        privatizer_phase(&mut k, &g.net, &h1.net, &h2.net, &batch, mode, 2.88, 1000.0).unwrap();
        assert_eq!(g, g0);
        assert_eq!(h1, h10);
        assert_eq!(h2, h20);

        let (k0, h10, h20) = (k.clone(), h1.clone(), h2.clone());
        reconstructor_phase(&k.net, &mut g, &batch, mode).unwrap();
        assert_eq!(k, k0);
        assert_eq!(h1, h10);
        assert_eq!(h2, h20);

        let (k0, g0, h20) = (k.clone(), g.clone(), h2.clone());
        adversary_phase(&k.net, &mut h1, &batch, mode, AdversarySide::First).unwrap();
        assert_eq!(k, k0);
        assert_eq!(g, g0);
        assert_eq!(h2, h20);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = binary_dataset(1200, 17);
        let cfg = binary_config(0.1, 12, 17);
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.epoch_log, b.epoch_log);
        assert_eq!(a.privatizer.net, b.privatizer.net);
        assert_eq!(a.adversary2.net, b.adversary2.net);
    }

    #[test]
    fn epoch_log_is_complete_and_finite() {
        let ds = gaussian_dataset(1200, 23);
        let cfg = gaussian_config(2.88, 8, 23);
        let state = train(&ds, &cfg).unwrap();
        assert_eq!(state.epoch_log.len(), 8);
        for (i, rec) in state.epoch_log.iter().enumerate() {
            assert_eq!(rec.epoch, i + 1);
            assert!(rec.l_recon.is_finite() && rec.l_recon >= 0.0);
            assert!(rec.l_adv1.is_finite() && rec.l_adv1 >= 0.0);
            assert!(rec.l_adv2.is_finite() && rec.l_adv2 >= 0.0);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ds = gaussian_dataset(300, 1);
        let mut cfg = gaussian_config(1.0, 1, 1);
        cfg.rho = 0.0;
        assert!(matches!(train(&ds, &cfg), Err(TrainError::Config(_))));
        let mut cfg = gaussian_config(1.0, 1, 1);
        cfg.batch_size = 100_000;
        assert!(matches!(train(&ds, &cfg), Err(TrainError::Config(_))));
        let mut cfg = binary_config(0.1, 1, 1);
        cfg.d_max_for_schedule = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn huge_penalty_pins_reconstruction_to_target() {
        // Constraint-dominated regime: with rho = 1e6 the symmetric penalty
        // drives the test reconstruction loss onto the threshold.
        let ds = gaussian_dataset(12_000, 91);
        let mut cfg = gaussian_config(2.88, 500, 17);
        cfg.rho = 1e6;
        cfg.batch_size = 1000;
        cfg.alpha_g = 0.003;
        let state = train(&ds, &cfg).unwrap();
        let last = state.epoch_log.last().unwrap();
        assert!(
            (last.l_recon - 2.88).abs() < 0.1,
            "final test recon loss {} vs target 2.88",
            last.l_recon
        );
    }

    #[test]
    fn frozen_passthrough_privatizer_lets_reconstructor_copy() {
        let ds = binary_dataset(6_000, 33);
        let k = passthrough_binary_privatizer();
        let mut g = TrainedComponent::new(7, Head::Sigmoid, OptimizerKind::RAdam, 0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..800 {
            let batch = sample_batch(&mut rng, ds.train(), 200);
            reconstructor_phase(&k, &mut g, &batch, Mode::Binary).unwrap();
        }
        let xs: Vec<f64> = ds.test().iter().map(|r| r.x).collect();
        let ests: Vec<f64> = ds
            .test()
            .iter()
            .map(|rec| {
                let f = privatize(&k, rec.x, rec.r, Mode::Binary).unwrap().f;
                g.net.value([f, rec.y])
            })
            .collect();
        let l = loss_01(&ests, &xs).unwrap();
        assert!(l < 0.02, "copyable signal not learned: test loss {l}");
    }

    #[test]
    fn pure_noise_release_drives_adversaries_to_side_info_floor() {
        let ds = gaussian_dataset(12_000, 57);
        let k = noise_only_gaussian_privatizer();
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        for (side, optimum) in [
            (AdversarySide::First, 15.8064),
            (AdversarySide::Second, 9.24),
        ] {
            let mut h = TrainedComponent::new(12, Head::Identity, OptimizerKind::Adam, 0.01);
            for _ in 0..2000 {
                let batch = sample_batch(&mut rng, ds.train(), 200);
                adversary_phase(&k, &mut h, &batch, Mode::Gaussian, side).unwrap();
            }
            let xs: Vec<f64> = ds.test().iter().map(|r| r.x).collect();
            let ests: Vec<f64> = ds
                .test()
                .iter()
                .map(|rec| {
                    let z = match side {
                        AdversarySide::First => rec.z1,
                        AdversarySide::Second => rec.z2,
                    };
                    h.net.value([rec.r, z])
                })
                .collect();
            let l = recon_loss_mse(&ests, &xs).unwrap();
            assert!(
                (l - optimum).abs() / optimum < 0.05,
                "{side:?}: test loss {l} vs side-info optimum {optimum}"
            );
        }
    }

    #[test]
    fn adversary_losses_respect_trivial_predictor_bound() {
        // Gaussian: once trained, the adversary never loses to the
        // prior-mean predictor (MSE sigma_X^2 = 16).
        let ds = gaussian_dataset(6_000, 77);
        let k = noise_only_gaussian_privatizer();
        let mut h = TrainedComponent::new(5, Head::Identity, OptimizerKind::Adam, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let xs: Vec<f64> = ds.test().iter().map(|r| r.x).collect();
        for epoch in 1..=200 {
            let batch = sample_batch(&mut rng, ds.train(), 500);
            adversary_phase(&k, &mut h, &batch, Mode::Gaussian, AdversarySide::First).unwrap();
            if epoch >= 50 {
                let ests: Vec<f64> = ds
                    .test()
                    .iter()
                    .map(|rec| h.net.value([rec.r, rec.z1]))
                    .collect();
                let l = recon_loss_mse(&ests, &xs).unwrap();
                assert!(l <= 16.0, "epoch {epoch}: adversary loss {l} above sigma_X^2");
            }
        }

        // Binary: the prior-majority floor 0.5 (+ small slack) holds from
        // epoch 50 on in a full training run.
        let ds = binary_dataset(3_000, 79);
        let cfg = binary_config(0.1, 100, 79);
        let state = train(&ds, &cfg).unwrap();
        for rec in state.epoch_log.iter().filter(|r| r.epoch >= 50) {
            assert!(rec.l_adv1 <= 0.52, "epoch {}: {}", rec.epoch, rec.l_adv1);
            assert!(rec.l_adv2 <= 0.52, "epoch {}: {}", rec.epoch, rec.l_adv2);
        }
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let gds = gaussian_dataset(400, 3);
        let k = MlpNet::init(100, Head::Identity);
        let g = MlpNet::init(101, Head::Identity);
        let h1 = MlpNet::init(102, Head::Identity);
        let h2 = MlpNet::init(103, Head::Identity);
        let report = check_privatizer_gradients(
            &k,
            &g,
            &h1,
            &h2,
            &gds.train()[..64],
            Mode::Gaussian,
            1.0,
            1000.0,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "gaussian rel error {}", report.max_rel_error);

        let bds = binary_dataset(400, 4);
        let k = MlpNet::init(110, Head::Sigmoid);
        let g = MlpNet::init(111, Head::Sigmoid);
        let h1 = MlpNet::init(112, Head::Sigmoid);
        let h2 = MlpNet::init(113, Head::Sigmoid);
        let report = check_privatizer_gradients(
            &k,
            &g,
            &h1,
            &h2,
            &bds.train()[..64],
            Mode::Binary,
            0.1,
            1.0,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "binary rel error {}", report.max_rel_error);
    }

    #[test]
    fn binary_substitution_path_carries_gradient() {
        // With interior p_hat the reconstruction loss must push a nonzero
        // gradient back into the privatizer even though f is sampled.
        let ds = binary_dataset(300, 5);
        let k = MlpNet::init(120, Head::Sigmoid);
        let g = MlpNet::init(121, Head::Sigmoid);
        let h1 = MlpNet::init(122, Head::Sigmoid);
        let h2 = MlpNet::init(123, Head::Sigmoid);
        let (grads, _, _) =
            privatizer_gradient(&k, &g, &h1, &h2, &ds.train()[..64], Mode::Binary, 0.1, 1.0)
                .unwrap();
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm > 1e-8, "no gradient through the substitution path");
    }

    #[test]
    fn divergence_is_reported_with_epoch_and_phase() {
        let ds = gaussian_dataset(600, 6);
        let mut cfg = gaussian_config(2.88, 3, 6);
        cfg.alpha_k = 1e12; // blows up immediately
        cfg.rho = 1e300;
        match train(&ds, &cfg) {
            Err(TrainError::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
