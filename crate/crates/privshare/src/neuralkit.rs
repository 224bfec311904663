//! Fixed-architecture MLP with exact backprop, Adam/RAdam, and
//! finite-difference gradient verification.
//!
//! Every network is 2 inputs -> 50 ReLU units -> 1 output, optionally put
//! through a sigmoid. Parameters live in one flat vector (w1 row-major,
//! b1, w2, b2) so optimizers and checkpoints treat them uniformly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const INPUT_DIM: usize = 2;
pub const HIDDEN_DIM: usize = 50;
/// w1 (50x2) + b1 (50) + w2 (1x50) + b2.
pub const N_PARAMS: usize = HIDDEN_DIM * INPUT_DIM + HIDDEN_DIM + HIDDEN_DIM + 1;

const W1: usize = 0;
const B1: usize = HIDDEN_DIM * INPUT_DIM;
const W2: usize = B1 + HIDDEN_DIM;
const B2: usize = W2 + HIDDEN_DIM;

const CHECKPOINT_MAGIC: &[u8; 8] = b"MLPNET01";
/// Largest f64 strictly below 1; sigmoid outputs clamp to (0, 1).
const ONE_MINUS_ULP: f64 = 0.999_999_999_999_999_9;
const SIGMOID_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("numeric state error: {0}")]
    NumericState(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Output activation of the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Identity,
    Sigmoid,
}

fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_FLOOR, ONE_MINUS_ULP)
}

/// The 2-50-1 network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    params: Vec<f64>,
    pub head: Head,
    pub seed: u64,
}

impl MlpNet {
    /// Seeded initialization: weights uniform in [-limit, limit] with
    /// limit = sqrt(6 / (fan_in + fan_out)) per layer, biases zero.
    pub fn init(seed: u64, head: Head) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; N_PARAMS];
        let lim1 = (6.0 / (INPUT_DIM + HIDDEN_DIM) as f64).sqrt();
        for p in params.iter_mut().take(B1) {
            *p = rng.random_range(-lim1..lim1);
        }
        let lim2 = (6.0 / (HIDDEN_DIM + 1) as f64).sqrt();
        for p in params.iter_mut().take(B2).skip(W2) {
            *p = rng.random_range(-lim2..lim2);
        }
        Self { params, head, seed }
    }

    pub fn from_params(params: Vec<f64>, head: Head, seed: u64) -> Result<Self, NeuralError> {
        if params.len() != N_PARAMS {
            return Err(NeuralError::ShapeMismatch(format!(
                "expected {N_PARAMS} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { params, head, seed })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Forward pass with a full numeric-state check on the parameters.
    pub fn forward(&self, input: [f64; 2]) -> Result<f64, NeuralError> {
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(NeuralError::NumericState(format!(
                "parameter {i} is not finite: {}",
                self.params[i]
            )));
        }
        if !input[0].is_finite() || !input[1].is_finite() {
            return Err(NeuralError::NumericState(format!(
                "input is not finite: ({}, {})",
                input[0], input[1]
            )));
        }
        Ok(self.value(input))
    }

    /// Unchecked forward pass for hot loops; callers monitor losses instead.
    pub fn value(&self, input: [f64; 2]) -> f64 {
        let p = &self.params;
        let mut pre = p[B2];
        for i in 0..HIDDEN_DIM {
            let z = p[W1 + 2 * i] * input[0] + p[W1 + 2 * i + 1] * input[1] + p[B1 + i];
            if z > 0.0 {
                pre += p[W2 + i] * z;
            }
        }
        match self.head {
            Head::Identity => pre,
            Head::Sigmoid => sigmoid(pre),
        }
    }

    /// Exact gradients of `sum_j upstream_j * output_j` with respect to the
    /// parameters, together with per-sample input gradients for chaining
    /// through a frozen downstream network.
    pub fn backward(&self, batch: &[([f64; 2], f64)]) -> Result<BackwardPass, NeuralError> {
        if batch.is_empty() {
            return Err(NeuralError::ShapeMismatch("empty batch".into()));
        }
        let p = &self.params;
        let mut grads = vec![0.0; N_PARAMS];
        let mut input_grads = Vec::with_capacity(batch.len());
        for &(input, upstream) in batch {
            let mut z = [0.0; HIDDEN_DIM];
            let mut pre = p[B2];
            for i in 0..HIDDEN_DIM {
                z[i] = p[W1 + 2 * i] * input[0] + p[W1 + 2 * i + 1] * input[1] + p[B1 + i];
                if z[i] > 0.0 {
                    pre += p[W2 + i] * z[i];
                }
            }
            let dhead = match self.head {
                Head::Identity => 1.0,
                Head::Sigmoid => {
                    let s = sigmoid(pre);
                    s * (1.0 - s)
                }
            };
            let dpre = upstream * dhead;
            grads[B2] += dpre;
            let mut du = 0.0;
            let mut dv = 0.0;
            for i in 0..HIDDEN_DIM {
                // ReLU subgradient at exactly 0 is 0.
                if z[i] > 0.0 {
                    grads[W2 + i] += dpre * z[i];
                    let dz = dpre * p[W2 + i];
                    grads[W1 + 2 * i] += dz * input[0];
                    grads[W1 + 2 * i + 1] += dz * input[1];
                    grads[B1 + i] += dz;
                    du += dz * p[W1 + 2 * i];
                    dv += dz * p[W1 + 2 * i + 1];
                }
            }
            input_grads.push([du, dv]);
        }
        Ok(BackwardPass { grads, input_grads })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), NeuralError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[match self.head {
            Head::Identity => 0u8,
            Head::Sigmoid => 1u8,
        }])?;
        for v in &self.params {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, NeuralError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| NeuralError::Checkpoint("file too short for magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NeuralError::Checkpoint(format!(
                "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
            )));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)
            .map_err(|_| NeuralError::Checkpoint("missing head flag".into()))?;
        let head = match flag[0] {
            0 => Head::Identity,
            1 => Head::Sigmoid,
            other => {
                return Err(NeuralError::Checkpoint(format!("bad head flag {other}")));
            }
        };
        let mut params = Vec::with_capacity(N_PARAMS);
        let mut buf = [0u8; 8];
        for i in 0..N_PARAMS {
            r.read_exact(&mut buf)
                .map_err(|_| NeuralError::Checkpoint(format!("truncated at parameter {i}")))?;
            params.push(f64::from_le_bytes(buf));
        }
        Self::from_params(params, head, 0)
    }
}

/// Parameter and per-sample input gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub grads: Vec<f64>,
    pub input_grads: Vec<[f64; 2]>,
}

/// Optimizer family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    RAdam,
}

/// Per-network optimizer state with flat moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, n_params: usize) -> Self {
        Self {
            kind,
            step_count: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One optimizer update in place.
    ///
    /// RAdam applies the variance-rectification factor once the estimated
    /// SMA length exceeds 4 and otherwise falls back to the unadapted
    /// momentum step.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NeuralError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "params {} / grads {} / state {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NeuralError::NumericState(format!(
                "gradient {i} is not finite: {}",
                grads[i]
            )));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let (b1, b2) = (self.beta1, self.beta2);
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);
        match self.kind {
            OptimizerKind::Adam => {
                for i in 0..params.len() {
                    let g = grads[i];
                    self.first_moment[i] = b1 * self.first_moment[i] + (1.0 - b1) * g;
                    self.second_moment[i] = b2 * self.second_moment[i] + (1.0 - b2) * g * g;
                    let m_hat = self.first_moment[i] / bias1;
                    let v_hat = self.second_moment[i] / bias2;
                    params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            }
            OptimizerKind::RAdam => {
                let rho_inf = 2.0 / (1.0 - b2) - 1.0;
                let rho_t = rho_inf - 2.0 * t * b2.powf(t) / bias2;
                let rect = if rho_t > 4.0 {
                    Some(
                        (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                            .sqrt(),
                    )
                } else {
                    None
                };
                for i in 0..params.len() {
                    let g = grads[i];
                    self.first_moment[i] = b1 * self.first_moment[i] + (1.0 - b1) * g;
                    self.second_moment[i] = b2 * self.second_moment[i] + (1.0 - b2) * g * g;
                    let m_hat = self.first_moment[i] / bias1;
                    match rect {
                        Some(r) => {
                            let v_hat = (self.second_moment[i] / bias2).sqrt();
                            params[i] -=
                                self.learning_rate * r * m_hat / (v_hat + self.epsilon);
                        }
                        None => params[i] -= self.learning_rate * m_hat,
                    }
                }
            }
        }
        Ok(())
    }
}

/// Loss families the single-network gradient check can drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean squared error against real targets.
    Mse,
    /// Soft 0-1 loss `mean(x (1 - out) + (1 - x) out)` against bit targets.
    Soft01,
}

/// Result of an analytic-vs-numeric gradient comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub passed: bool,
}

fn batch_loss(net: &MlpNet, loss: LossKind, inputs: &[[f64; 2]], targets: &[f64]) -> f64 {
    if inputs.is_empty() {
        return 0.0;
    }
    let m = inputs.len() as f64;
    let mut total = 0.0;
    for (inp, &t) in inputs.iter().zip(targets) {
        let out = net.value(*inp);
        total += match loss {
            LossKind::Mse => (out - t) * (out - t),
            LossKind::Soft01 => t * (1.0 - out) + (1.0 - t) * out,
        };
    }
    total / m
}

/// Central finite differences of `f` at `params` with step `h`.
pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(
    params: &[f64],
    mut f: F,
    h: f64,
) -> Vec<f64> {
    let mut work = params.to_vec();
    let mut grads = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = f(&work);
        work[i] = orig - h;
        let minus = f(&work);
        work[i] = orig;
        grads[i] = (plus - minus) / (2.0 * h);
    }
    grads
}

/// Compares gradient vectors coordinate-wise with a relative-error metric
/// floored at 1e-3 magnitude so near-zero coordinates compare absolutely.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tolerance: f64) -> GradCheckReport {
    let mut max_rel_error: f64 = 0.0;
    let mut worst_param = 0;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_param = i;
        }
    }
    GradCheckReport {
        max_rel_error,
        worst_param,
        passed: max_rel_error <= tolerance,
    }
}

/// Verifies analytic backprop against central finite differences for the
/// given loss on the given batch.
pub fn gradient_check(
    net: &MlpNet,
    loss: LossKind,
    inputs: &[[f64; 2]],
    targets: &[f64],
    tolerance: f64,
) -> Result<GradCheckReport, NeuralError> {
    if inputs.len() != targets.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "{} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if !(tolerance > 0.0) {
        return Err(NeuralError::ShapeMismatch("tolerance must be positive".into()));
    }
    if inputs.is_empty() {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            worst_param: 0,
            passed: true,
        });
    }
    let m = inputs.len() as f64;
    let batch: Vec<([f64; 2], f64)> = inputs
        .iter()
        .zip(targets)
        .map(|(inp, &t)| {
            let out = net.value(*inp);
            let upstream = match loss {
                LossKind::Mse => 2.0 * (out - t) / m,
                LossKind::Soft01 => (1.0 - 2.0 * t) / m,
            };
            (*inp, upstream)
        })
        .collect();
    let analytic = net.backward(&batch)?.grads;
    let numeric = numerical_gradient(
        net.params(),
        |p| {
            let probe = MlpNet::from_params(p.to_vec(), net.head, 0).expect("same length");
            batch_loss(&probe, loss, inputs, targets)
        },
        1e-5,
    );
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic parameter fill mirrored by the out-of-repo reference
    /// computation that produced the frozen forward values below.
    fn sin_filled(head: Head) -> MlpNet {
        let mut params = vec![0.0; N_PARAMS];
        for k in 0..100 {
            params[W1 + k] = (0.1 * (k + 1) as f64).sin() * 0.5;
        }
        for i in 0..HIDDEN_DIM {
            params[B1 + i] = 0.01 * i as f64 - 0.25;
            params[W2 + i] = (0.05 * (i + 3) as f64).cos() * 0.3;
        }
        params[B2] = 0.125;
        MlpNet::from_params(params, head, 0).unwrap()
    }

    fn random_batch(seed: u64, m: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<[f64; 2]> = (0..m)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let targets: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        (inputs, targets)
    }

    #[test]
    fn zero_network_outputs() {
        let zero = MlpNet::from_params(vec![0.0; N_PARAMS], Head::Identity, 0).unwrap();
        assert_eq!(zero.forward([3.0, -7.0]).unwrap(), 0.0);
        let zero = MlpNet::from_params(vec![0.0; N_PARAMS], Head::Sigmoid, 0).unwrap();
        assert_eq!(zero.forward([3.0, -7.0]).unwrap(), 0.5);
    }

    #[test]
    fn forward_matches_independent_reference() {
        let net = sin_filled(Head::Identity);
        let out = net.forward([1.0, -2.0]).unwrap();
        assert!(
            (out - 0.076547373190045009).abs() < 1e-12,
            "identity forward = {out}"
        );
        let net = sin_filled(Head::Sigmoid);
        let out = net.forward([1.0, -2.0]).unwrap();
        assert!(
            (out - 0.51912750440794142).abs() < 1e-12,
            "sigmoid forward = {out}"
        );
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let a = MlpNet::init(1337, Head::Identity);
        let b = MlpNet::init(1337, Head::Identity);
        assert_eq!(a, b);
        let c = MlpNet::init(1338, Head::Identity);
        assert_ne!(a, c);
        let lim1 = (6.0 / 52.0f64).sqrt();
        let lim2 = (6.0 / 51.0f64).sqrt();
        for i in 0..B1 {
            assert!(a.params()[i].abs() <= lim1);
        }
        for i in B1..W2 {
            assert_eq!(a.params()[i], 0.0);
        }
        for i in W2..B2 {
            assert!(a.params()[i].abs() <= lim2);
        }
        assert_eq!(a.params()[B2], 0.0);
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let mut net = MlpNet::init(1, Head::Identity);
        net.params_mut()[17] = f64::NAN;
        assert!(matches!(
            net.forward([0.0, 0.0]),
            Err(NeuralError::NumericState(_))
        ));
    }

    #[test]
    fn zero_upstream_means_zero_gradient() {
        let net = MlpNet::init(5, Head::Identity);
        let pass = net
            .backward(&[([0.4, -0.2], 0.0), ([1.0, 2.0], 0.0)])
            .unwrap();
        assert!(pass.grads.iter().all(|&g| g == 0.0));
        assert!(pass.input_grads.iter().all(|g| g == &[0.0, 0.0]));
    }

    #[test]
    fn duplicated_sample_doubles_gradient() {
        let net = MlpNet::init(6, Head::Sigmoid);
        let single = net.backward(&[([0.3, 0.9], 1.5)]).unwrap();
        let double = net
            .backward(&[([0.3, 0.9], 1.5), ([0.3, 0.9], 1.5)])
            .unwrap();
        for (s, d) in single.grads.iter().zip(&double.grads) {
            assert_eq!(2.0 * s, *d);
        }
    }

    #[test]
    fn empty_batch_is_rejected_by_backward() {
        let net = MlpNet::init(6, Head::Identity);
        assert!(matches!(
            net.backward(&[]),
            Err(NeuralError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences_per_coordinate() {
        // Gradient of the raw weighted-output objective, both heads.
        for head in [Head::Identity, Head::Sigmoid] {
            let net = MlpNet::init(42, head);
            let batch = [([0.37, -1.21], 0.7), ([-0.55, 0.89], -1.3)];
            let analytic = net.backward(&batch).unwrap().grads;
            let numeric = numerical_gradient(
                net.params(),
                |p| {
                    let probe = MlpNet::from_params(p.to_vec(), head, 0).unwrap();
                    batch.iter().map(|&(inp, w)| w * probe.value(inp)).sum()
                },
                1e-5,
            );
            let report = compare_gradients(&analytic, &numeric, 1e-4);
            assert!(
                report.passed,
                "{head:?}: rel error {} at {}",
                report.max_rel_error, report.worst_param
            );
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let net = MlpNet::init(43, Head::Identity);
        let input = [0.61, -0.48];
        let pass = net.backward(&[(input, 1.0)]).unwrap();
        let h = 1e-6;
        for axis in 0..2 {
            let mut plus = input;
            plus[axis] += h;
            let mut minus = input;
            minus[axis] -= h;
            let fd = (net.value(plus) - net.value(minus)) / (2.0 * h);
            assert!(
                (pass.input_grads[0][axis] - fd).abs() < 1e-6,
                "axis {axis}: {} vs {fd}",
                pass.input_grads[0][axis]
            );
        }
    }

    #[test]
    fn adam_zero_gradient_only_counts_steps() {
        let mut net = MlpNet::init(7, Head::Identity);
        let before = net.params().to_vec();
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, N_PARAMS);
        opt.step(net.params_mut(), &vec![0.0; N_PARAMS]).unwrap();
        assert_eq!(net.params(), &before[..]);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate_sign() {
        let mut params = vec![0.0; 4];
        let grads = vec![0.5, -2.0, 1e-3, 0.0];
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, 4);
        opt.step(&mut params, &grads).unwrap();
        for (p, g) in params.iter().zip(&grads) {
            if *g == 0.0 {
                assert_eq!(*p, 0.0);
            } else {
                assert!(
                    (*p + 0.01 * g.signum()).abs() < 1e-6,
                    "p = {p} for g = {g}"
                );
            }
        }
    }

    #[test]
    fn radam_matches_reference_trace() {
        // f(theta) = theta^2 / 2 so the gradient is theta itself; the first
        // four steps take the momentum fallback, the fifth is rectified.
        let reference = [
            0.98999999999999999,
            0.9800526315789474,
            0.97015944843658963,
            0.96032197586648893,
            0.96014924239724109,
        ];
        let mut theta = vec![1.0];
        let mut opt = OptimizerState::new(OptimizerKind::RAdam, 0.01, 1);
        for want in reference {
            let g = vec![theta[0]];
            opt.step(&mut theta, &g).unwrap();
            assert!(
                (theta[0] - want).abs() < 1e-15,
                "step {}: {} vs {want}",
                opt.step_count,
                theta[0]
            );
        }
    }

    #[test]
    fn optimizer_rejects_bad_shapes_and_values() {
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, 4);
        let mut params = vec![0.0; 4];
        assert!(matches!(
            opt.step(&mut params, &[0.0; 3]),
            Err(NeuralError::ShapeMismatch(_))
        ));
        assert!(matches!(
            opt.step(&mut params, &[0.0, f64::INFINITY, 0.0, 0.0]),
            Err(NeuralError::NumericState(_))
        ));
    }

    #[test]
    fn optimizer_step_is_deterministic() {
        let grads: Vec<f64> = (0..N_PARAMS).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = || {
            let mut net = MlpNet::init(11, Head::Identity);
            let mut opt = OptimizerState::new(OptimizerKind::RAdam, 0.003, N_PARAMS);
            opt.step(net.params_mut(), &grads).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sigmoid_head_stays_strictly_inside_unit_interval() {
        let mut big = vec![1e6; N_PARAMS];
        big[B2] = 1e12;
        let net = MlpNet::from_params(big, Head::Sigmoid, 0).unwrap();
        let hi = net.value([1e3, 1e3]);
        assert!(hi < 1.0 && hi > 0.0, "hi = {hi}");
        let mut low = vec![0.0; N_PARAMS];
        low[B2] = -1e12;
        let net = MlpNet::from_params(low, Head::Sigmoid, 0).unwrap();
        let lo = net.value([0.0, 0.0]);
        assert!(lo > 0.0 && lo < 1.0, "lo = {lo}");
    }

    #[test]
    fn gradient_check_passes_for_both_losses() {
        let (inputs, targets) = random_batch(100, 16);
        let report = gradient_check(
            &MlpNet::init(101, Head::Identity),
            LossKind::Mse,
            &inputs,
            &targets,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "mse rel error {}", report.max_rel_error);

        let bits: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
        let report = gradient_check(
            &MlpNet::init(102, Head::Sigmoid),
            LossKind::Soft01,
            &inputs,
            &bits,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "soft01 rel error {}", report.max_rel_error);
    }

    #[test]
    fn empty_batch_trivially_passes_gradient_check() {
        let report = gradient_check(
            &MlpNet::init(1, Head::Identity),
            LossKind::Mse,
            &[],
            &[],
            1e-4,
        )
        .unwrap();
        assert!(report.passed);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn corrupted_gradient_fails_the_check() {
        let (inputs, targets) = random_batch(200, 8);
        let net = MlpNet::init(201, Head::Identity);
        let m = inputs.len() as f64;
        let batch: Vec<([f64; 2], f64)> = inputs
            .iter()
            .zip(&targets)
            .map(|(inp, &t)| (*inp, 2.0 * (net.value(*inp) - t) / m))
            .collect();
        let mut corrupted = net.backward(&batch).unwrap().grads;
        corrupted[B2] += 0.1;
        let numeric = numerical_gradient(
            net.params(),
            |p| {
                let probe = MlpNet::from_params(p.to_vec(), Head::Identity, 0).unwrap();
                batch_loss(&probe, LossKind::Mse, &inputs, &targets)
            },
            1e-5,
        );
        let report = compare_gradients(&corrupted, &numeric, 1e-4);
        assert!(!report.passed);
        assert_eq!(report.worst_param, B2);
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = MlpNet::init(77, Head::Sigmoid);
        net.save_checkpoint(&path).unwrap();
        let loaded = MlpNet::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params(), net.params());
        assert_eq!(loaded.head, Head::Sigmoid);

        let truncated = dir.path().join("short.bin");
        std::fs::write(&truncated, &std::fs::read(&path).unwrap()[..100]).unwrap();
        assert!(matches!(
            MlpNet::load_checkpoint(&truncated),
            Err(NeuralError::Checkpoint(_))
        ));

        let bad = dir.path().join("bad.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(
            MlpNet::load_checkpoint(&bad),
            Err(NeuralError::Checkpoint(_))
        ));
    }
}
