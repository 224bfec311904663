//! Closed-form Gaussian solution and conditional-variance oracle.
//!
//! In the jointly Gaussian model the optimal release is `F = a*X + b*R` with
//! `R` standard normal. Conditional variances obey the precision identity
//! `1/Var[X|F,S] = 1/Var[X|S] + (a/b)^2`, which yields the curvature factors
//! `Q_i`, the effective distortion clamp `D' = min(D, Var[X|Y])` and the
//! adversarial losses `D'/(1 + Q_i D')`. The [`mmse_oracle`] recomputes the
//! same quantities from the extended five-variable covariance by Schur
//! complement, deliberately bypassing those formulas.

use crate::sources::{GaussianJointSource, SideVar, SourceError};
use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate source: {0}")]
    DegenerateSource(String),
    #[error("degenerate conditioning: {0}")]
    DegenerateConditioning(String),
    #[error(transparent)]
    Source(#[from] SourceError),
}

/// Adversary selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adversary {
    One,
    Two,
}

impl Adversary {
    fn side(self) -> SideVar {
        match self {
            Adversary::One => SideVar::Z1,
            Adversary::Two => SideVar::Z2,
        }
    }
}

/// Linear Gaussian privatizer `F = a*X + b*R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrivatizer {
    pub a: f64,
    pub b: f64,
}

impl GaussianPrivatizer {
    pub fn new(a: f64, b: f64) -> Result<Self, GaussianError> {
        if a == 0.0 && b == 0.0 {
            return Err(GaussianError::InvalidArgument(
                "privatizer coefficients (a, b) must not both be zero".into(),
            ));
        }
        Ok(Self { a, b })
    }

    /// Variance of the released variable given the private variance.
    pub fn sigma_f2(&self, sigma_x2: f64) -> f64 {
        self.a * self.a * sigma_x2 + self.b * self.b
    }
}

/// Result of the closed-form solve at one distortion threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSolution {
    pub d_prime: f64,
    pub q1: f64,
    pub q2: f64,
    pub adv_loss_1: f64,
    pub adv_loss_2: f64,
    pub objective: f64,
    pub saturated: bool,
}

/// Outcome of inverting the distortion target to privatizer coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivatizerFit {
    pub privatizer: GaussianPrivatizer,
    /// Set when d = 0 forced the noiseless release (1, 0).
    pub degenerate: bool,
    /// Set when d exceeded Var[X|Y] and was clamped.
    pub saturated: bool,
}

/// Exact Schur-complement conditional variance plus its sampled estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmseEstimate {
    pub exact: f64,
    pub empirical: f64,
}

/// Variables available to a conditioning set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Conditioner {
    F,
    Y,
    Z1,
    Z2,
}

impl Conditioner {
    /// Index in the extended joint order (X, F, Y, Z1, Z2).
    fn index(self) -> usize {
        match self {
            Conditioner::F => 1,
            Conditioner::Y => 2,
            Conditioner::Z1 => 3,
            Conditioner::Z2 => 4,
        }
    }
}

/// `Var[X | side] = sigma_X^2 (1 - rho^2)`.
pub fn conditional_variance_given_one(source: &GaussianJointSource, side: SideVar) -> f64 {
    let rho = source.rho(0, side.index());
    source.sigma2(0) * (1.0 - rho * rho)
}

/// Curvature factor of one adversary:
/// `(rho_XZi^2 - rho_XY^2) / (sigma_X^2 (1 - rho_XZi^2)(1 - rho_XY^2))`.
pub fn q_factor(source: &GaussianJointSource, adversary: Adversary) -> Result<f64, GaussianError> {
    let rho_xy = source.rho(0, SideVar::Y.index());
    let rho_xz = source.rho(0, adversary.side().index());
    if 1.0 - rho_xy * rho_xy <= 0.0 {
        return Err(GaussianError::DegenerateSource(
            "|rho_XY| = 1: reconstructor side information is perfect".into(),
        ));
    }
    if 1.0 - rho_xz * rho_xz <= 0.0 {
        return Err(GaussianError::DegenerateSource(
            "|rho_XZ| = 1: adversary side information is perfect".into(),
        ));
    }
    Ok((rho_xz * rho_xz - rho_xy * rho_xy)
        / (source.sigma2(0) * (1.0 - rho_xz * rho_xz) * (1.0 - rho_xy * rho_xy)))
}

/// Solves the maximin problem in closed form at distortion threshold `d`.
///
/// `D' = min(d, Var[X|Y])`; each adversarial loss is `D'/(1 + Q_i D')` and
/// the objective is their minimum. At `d = 0` the release is noiseless and
/// every loss is zero.
pub fn solve_gaussian(
    source: &GaussianJointSource,
    d: f64,
) -> Result<GaussianSolution, GaussianError> {
    if !(d >= 0.0) {
        return Err(GaussianError::InvalidArgument(format!(
            "distortion threshold must be nonnegative, got {d}"
        )));
    }
    let var_xy = conditional_variance_given_one(source, SideVar::Y);
    let q1 = q_factor(source, Adversary::One)?;
    let q2 = q_factor(source, Adversary::Two)?;
    let d_prime = d.min(var_xy);
    let (adv_loss_1, adv_loss_2) = if d_prime == 0.0 {
        (0.0, 0.0)
    } else {
        (d_prime / (1.0 + q1 * d_prime), d_prime / (1.0 + q2 * d_prime))
    };
    Ok(GaussianSolution {
        d_prime,
        q1,
        q2,
        adv_loss_1,
        adv_loss_2,
        objective: adv_loss_1.min(adv_loss_2),
        saturated: d >= var_xy,
    })
}

/// Inverts the reconstructor distortion target into privatizer coefficients
/// via `(a/b)^2 = 1/d - 1/Var[X|Y]`, normalized to `b = 1`.
pub fn snr_for_distortion(
    source: &GaussianJointSource,
    d: f64,
) -> Result<PrivatizerFit, GaussianError> {
    if !(d >= 0.0) {
        return Err(GaussianError::InvalidArgument(format!(
            "distortion target must be nonnegative, got {d}"
        )));
    }
    let var_xy = conditional_variance_given_one(source, SideVar::Y);
    if d == 0.0 {
        // Zero distortion requires b = 0: the release is X itself.
        return Ok(PrivatizerFit {
            privatizer: GaussianPrivatizer { a: 1.0, b: 0.0 },
            degenerate: true,
            saturated: false,
        });
    }
    let clamped = d.min(var_xy);
    let a = (1.0 / clamped - 1.0 / var_xy).max(0.0).sqrt();
    Ok(PrivatizerFit {
        privatizer: GaussianPrivatizer { a, b: 1.0 },
        degenerate: false,
        saturated: d > var_xy,
    })
}

/// Covariance of the extended vector (X, F, Y, Z1, Z2).
fn extended_covariance(source: &GaussianJointSource, priv_: &GaussianPrivatizer) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(5, 5);
    // map extended index -> base index, with F absent from the base order
    let base = [Some(0), None, Some(1), Some(2), Some(3)];
    for i in 0..5 {
        for j in 0..5 {
            m[(i, j)] = match (base[i], base[j]) {
                (Some(bi), Some(bj)) => source.cov[bi][bj],
                (None, None) => priv_.sigma_f2(source.sigma2(0)),
                (None, Some(bj)) => priv_.a * source.cov[0][bj],
                (Some(bi), None) => priv_.a * source.cov[bi][0],
            };
        }
    }
    m
}

/// Conditional variance of X given a set of observed variables.
///
/// The exact branch is the Schur complement
/// `Var[X|S] = S_xx - S_xs S_ss^{-1} S_sx` on the extended covariance. The
/// empirical branch draws `n` joint samples, applies the linear MMSE
/// estimator with the same coefficients, and reports the mean squared
/// residual; it exists to validate samplers and training, not the algebra.
pub fn mmse_oracle(
    source: &GaussianJointSource,
    privatizer: &GaussianPrivatizer,
    conditioners: &[Conditioner],
    n: usize,
    seed: u64,
) -> Result<MmseEstimate, GaussianError> {
    if conditioners.is_empty() {
        return Err(GaussianError::InvalidArgument(
            "conditioning set must be non-empty".into(),
        ));
    }
    if n == 0 {
        return Err(GaussianError::InvalidArgument(
            "empirical sample count must be at least 1".into(),
        ));
    }
    let mut set: Vec<Conditioner> = conditioners.to_vec();
    set.sort();
    set.dedup();
    let idx: Vec<usize> = set.iter().map(|c| c.index()).collect();
    let ext = extended_covariance(source, privatizer);
    let k = idx.len();
    let mut s_ss = DMatrix::zeros(k, k);
    let mut s_xs = DVector::zeros(k);
    for (r, &i) in idx.iter().enumerate() {
        s_xs[r] = ext[(0, i)];
        for (c, &j) in idx.iter().enumerate() {
            s_ss[(r, c)] = ext[(i, j)];
        }
    }
    let chol = nalgebra::Cholesky::new(s_ss.clone()).ok_or_else(|| {
        GaussianError::DegenerateConditioning(format!(
            "conditioning block for {set:?} is singular"
        ))
    })?;
    let weights = chol.solve(&s_xs);
    let exact = ext[(0, 0)] - s_xs.dot(&weights);

    // Empirical mean squared residual of the linear MMSE estimator.
    let src_chol = nalgebra::Cholesky::new(source.matrix()).ok_or_else(|| {
        GaussianError::DegenerateConditioning("source covariance is singular".into())
    })?;
    let l: Matrix4<f64> = src_chol.l();
    let mean = Vector4::from_column_slice(&source.mean);
    let mean_ext = [
        mean[0],
        privatizer.a * mean[0],
        mean[1],
        mean[2],
        mean[3],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let z = Vector4::from_fn(|_, _| normal.sample(&mut rng));
        let v = mean + l * z;
        let rf: f64 = normal.sample(&mut rng);
        let f = privatizer.a * v[0] + privatizer.b * rf;
        let obs = [v[0], f, v[1], v[2], v[3]];
        let mut xhat = mean_ext[0];
        for (r, &i) in idx.iter().enumerate() {
            xhat += weights[r] * (obs[i] - mean_ext[i]);
        }
        let resid = v[0] - xhat;
        sum_sq += resid * resid;
    }
    Ok(MmseEstimate {
        exact,
        empirical: sum_sq / n as f64,
    })
}
