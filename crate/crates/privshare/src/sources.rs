//! Joint source models and reproducible dataset generation.
//!
//! Two source families are supported: a four-dimensional jointly Gaussian
//! vector `(X, Y, Z1, Z2)` specified by means and a covariance matrix, and a
//! Bernoulli private bit whose side variables come out of independent binary
//! symmetric channels. Sampling is a pure function of `(source, n, seed)`.

use nalgebra::{Matrix4, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Symmetry tolerance when validating covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("invalid source model: {0}")]
    InvalidModel(String),
    #[error("covariance is not positive semidefinite: eigenvalue {index} is {value:.6e}")]
    NotPsd { index: usize, value: f64 },
    #[error("correlation is undefined: {0} has zero sample variance")]
    UndefinedCorrelation(VarName),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Variable names of a dataset column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarName {
    X,
    Y,
    Z1,
    Z2,
    R,
}

impl std::fmt::Display for VarName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VarName::X => "x",
            VarName::Y => "y",
            VarName::Z1 => "z1",
            VarName::Z2 => "z2",
            VarName::R => "r",
        };
        f.write_str(s)
    }
}

/// Index of the conditioning side variable in the joint order (X, Y, Z1, Z2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideVar {
    Y,
    Z1,
    Z2,
}

impl SideVar {
    /// Column index within the 4x4 joint covariance.
    pub fn index(self) -> usize {
        match self {
            SideVar::Y => 1,
            SideVar::Z1 => 2,
            SideVar::Z2 => 3,
        }
    }
}

/// Jointly Gaussian source for `(X, Y, Z1, Z2)`.
///
/// The covariance is stored in the order X, Y, Z1, Z2 and is the single
/// source of truth; correlations are derived from it on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianJointSource {
    pub mean: [f64; 4],
    pub cov: [[f64; 4]; 4],
}

impl GaussianJointSource {
    /// Builds a source from per-variable standard deviations and pairwise
    /// correlations, then validates it.
    pub fn from_correlations(
        mean: [f64; 4],
        sigma: [f64; 4],
        rho: &[((usize, usize), f64)],
    ) -> Result<Self, SourceError> {
        let mut cov = [[0.0; 4]; 4];
        for i in 0..4 {
            cov[i][i] = sigma[i] * sigma[i];
        }
        for &((i, j), r) in rho {
            cov[i][j] = r * sigma[i] * sigma[j];
            cov[j][i] = cov[i][j];
        }
        let source = Self { mean, cov };
        source.validate()?;
        Ok(source)
    }

    /// The preset used throughout the Gaussian experiments: means
    /// (4, 3, 4.5, 5), variances (16, 0.90, 12.25, 2.25) and correlations
    /// rho_XY = 0.80, rho_XZ1 = 0.11, rho_XZ2 = 0.65, rho_YZ1 = 0.23,
    /// rho_YZ2 = 0.59, rho_Z1Z2 = 0.19.
    pub fn paper_preset() -> Self {
        let sigma = [4.0, 0.90f64.sqrt(), 3.5, 1.5];
        let rho = [
            ((0, 1), 0.80),
            ((0, 2), 0.11),
            ((0, 3), 0.65),
            ((1, 2), 0.23),
            ((1, 3), 0.59),
            ((2, 3), 0.19),
        ];
        Self::from_correlations([4.0, 3.0, 4.5, 5.0], sigma, &rho)
            .expect("preset covariance is valid")
    }

    /// Checks symmetry, strictly positive diagonal, correlation bounds and
    /// positive semidefiniteness (via Cholesky; on failure the most negative
    /// eigenvalue is reported).
    pub fn validate(&self) -> Result<(), SourceError> {
        for i in 0..4 {
            for j in (i + 1)..4 {
                if (self.cov[i][j] - self.cov[j][i]).abs() > SYMMETRY_TOL {
                    return Err(SourceError::InvalidModel(format!(
                        "covariance not symmetric at ({i},{j}): {} vs {}",
                        self.cov[i][j], self.cov[j][i]
                    )));
                }
            }
        }
        for i in 0..4 {
            if !(self.cov[i][i] > 0.0) {
                return Err(SourceError::InvalidModel(format!(
                    "diagonal entry {i} must be strictly positive, got {}",
                    self.cov[i][i]
                )));
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let rho = self.rho(i, j);
                    if rho.abs() > 1.0 + 1e-12 {
                        return Err(SourceError::InvalidModel(format!(
                            "implied correlation ({i},{j}) = {rho} lies outside [-1, 1]"
                        )));
                    }
                }
            }
        }
        if self.cholesky().is_none() {
            let m = self.matrix();
            let eig = m.symmetric_eigen();
            let (index, value) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, v)| (i, *v))
                .expect("4x4 eigenvalues");
            return Err(SourceError::NotPsd { index, value });
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.cov[i][j])
    }

    fn cholesky(&self) -> Option<nalgebra::Cholesky<f64, nalgebra::Const<4>>> {
        nalgebra::Cholesky::new(self.matrix())
    }

    pub fn sigma2(&self, i: usize) -> f64 {
        self.cov[i][i]
    }

    /// Correlation implied by the covariance entry (i, j).
    pub fn rho(&self, i: usize, j: usize) -> f64 {
        self.cov[i][j] / (self.cov[i][i] * self.cov[j][j]).sqrt()
    }
}

/// Bernoulli private bit with three independent BSC side channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarySource {
    /// Pr(X = 1).
    pub p: f64,
    /// Crossover probability of the reconstructor channel.
    pub q_y: f64,
    /// Crossover probability of adversary 1's channel.
    pub q_z1: f64,
    /// Crossover probability of adversary 2's channel.
    pub q_z2: f64,
}

impl BinarySource {
    /// Single-adversary preset from the binary experiments: p = 0.54,
    /// q_y = 0.2, q_z = 0.44 for both adversaries.
    pub fn paper_preset() -> Self {
        Self {
            p: 0.54,
            q_y: 0.2,
            q_z1: 0.44,
            q_z2: 0.44,
        }
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        for (name, v) in [
            ("p", self.p),
            ("q_y", self.q_y),
            ("q_z1", self.q_z1),
            ("q_z2", self.q_z2),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(SourceError::InvalidModel(format!(
                    "{name} = {v} is not a probability in [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// One sampled record. In the binary case x, y, z1, z2 hold 0.0/1.0 and r is
/// uniform on [0, 1); in the Gaussian case r is standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub x: f64,
    pub y: f64,
    pub z1: f64,
    pub z2: f64,
    pub r: f64,
}

impl Record {
    pub fn get(&self, var: VarName) -> f64 {
        match var {
            VarName::X => self.x,
            VarName::Y => self.y,
            VarName::Z1 => self.z1,
            VarName::Z2 => self.z2,
            VarName::R => self.r,
        }
    }
}

/// A sampled dataset with a train/test prefix split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub split_index: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn train(&self) -> &[Record] {
        &self.records[..self.split_index]
    }

    pub fn test(&self) -> &[Record] {
        &self.records[self.split_index..]
    }

    /// Writes the dataset as CSV with header `x,y,z1,z2,r`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SourceError> {
        writeln!(w, "x,y,z1,z2,r")?;
        for rec in &self.records {
            writeln!(w, "{},{},{},{},{}", rec.x, rec.y, rec.z1, rec.z2, rec.r)?;
        }
        Ok(())
    }
}

fn split_for(n: usize, train_fraction: f64) -> usize {
    ((n as f64) * train_fraction).round().clamp(0.0, n as f64) as usize
}

/// Draws `n` i.i.d. records from the joint Gaussian source, shuffles them
/// with the same seeded stream, and splits train/test by `train_fraction`.
///
/// Each record consumes five standard-normal draws: four mapped through the
/// Cholesky factor of the covariance and one kept as the independent noise
/// coordinate `r`.
pub fn sample_gaussian(
    source: &GaussianJointSource,
    n: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Dataset, SourceError> {
    source.validate()?;
    if n == 0 {
        return Err(SourceError::EmptySample);
    }
    let chol = source.cholesky().expect("validated covariance factors");
    let l = chol.l();
    let mean = Vector4::from_column_slice(&source.mean);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let z = Vector4::from_fn(|_, _| normal.sample(&mut rng));
        let v = mean + l * z;
        let r: f64 = normal.sample(&mut rng);
        records.push(Record {
            x: v[0],
            y: v[1],
            z1: v[2],
            z2: v[3],
            r,
        });
    }
    records.shuffle(&mut rng);
    Ok(Dataset {
        split_index: split_for(n, train_fraction),
        records,
        seed,
    })
}

/// Draws `n` i.i.d. records from the binary source: x ~ Bernoulli(p), each
/// side variable flips x independently with its crossover probability, and
/// r is uniform on [0, 1).
pub fn sample_binary(
    source: &BinarySource,
    n: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Dataset, SourceError> {
    source.validate()?;
    if n == 0 {
        return Err(SourceError::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fn flip(rng: &mut ChaCha8Rng, x: f64, q: f64) -> f64 {
        let u: f64 = rng.random();
        if u < q {
            1.0 - x
        } else {
            x
        }
    }
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let x = if u < source.p { 1.0 } else { 0.0 };
        let y = flip(&mut rng, x, source.q_y);
        let z1 = flip(&mut rng, x, source.q_z1);
        let z2 = flip(&mut rng, x, source.q_z2);
        let r: f64 = rng.random();
        records.push(Record { x, y, z1, z2, r });
    }
    records.shuffle(&mut rng);
    Ok(Dataset {
        split_index: split_for(n, train_fraction),
        records,
        seed,
    })
}

/// Pearson sample correlation between two dataset columns.
pub fn empirical_correlation(
    dataset: &Dataset,
    var_a: VarName,
    var_b: VarName,
) -> Result<f64, SourceError> {
    if dataset.records.is_empty() {
        return Err(SourceError::EmptyDataset);
    }
    let n = dataset.records.len() as f64;
    let mean = |v: VarName| dataset.records.iter().map(|r| r.get(v)).sum::<f64>() / n;
    let ma = mean(var_a);
    let mb = mean(var_b);
    let mut caa = 0.0;
    let mut cbb = 0.0;
    let mut cab = 0.0;
    for rec in &dataset.records {
        let da = rec.get(var_a) - ma;
        let db = rec.get(var_b) - mb;
        caa += da * da;
        cbb += db * db;
        cab += da * db;
    }
    if caa == 0.0 {
        return Err(SourceError::UndefinedCorrelation(var_a));
    }
    if cbb == 0.0 {
        return Err(SourceError::UndefinedCorrelation(var_b));
    }
    if var_a == var_b {
        return Ok(1.0);
    }
    Ok(cab / (caa * cbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity16() -> GaussianJointSource {
        let mut cov = [[0.0; 4]; 4];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = 16.0;
        }
        GaussianJointSource {
            mean: [0.0; 4],
            cov,
        }
    }

    #[test]
    fn independent_gaussian_has_near_zero_cross_correlations() {
        let ds = sample_gaussian(&identity16(), 100_000, 0.8, 42).unwrap();
        let vars = [VarName::X, VarName::Y, VarName::Z1, VarName::Z2];
        for i in 0..4 {
            for j in (i + 1)..4 {
                let rho = empirical_correlation(&ds, vars[i], vars[j]).unwrap();
                assert!(rho.abs() < 0.02, "rho({i},{j}) = {rho}");
            }
        }
    }

    #[test]
    fn paper_preset_means_match() {
        let src = GaussianJointSource::paper_preset();
        let ds = sample_gaussian(&src, 100_000, 0.8, 7).unwrap();
        let n = ds.records.len() as f64;
        let expected = [4.0, 3.0, 4.5, 5.0];
        for (var, want) in [VarName::X, VarName::Y, VarName::Z1, VarName::Z2]
            .into_iter()
            .zip(expected)
        {
            let m = ds.records.iter().map(|r| r.get(var)).sum::<f64>() / n;
            assert!((m - want).abs() < 0.05, "{var}: mean {m} vs {want}");
        }
    }

    #[test]
    fn invalid_correlation_is_rejected() {
        let sigma = [4.0, 0.90f64.sqrt(), 3.5, 1.5];
        let err = GaussianJointSource::from_correlations(
            [0.0; 4],
            sigma,
            &[((0, 1), 1.2)],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("correlation") || msg.contains("semidefinite"),
            "unexpected error: {msg}"
        );
    }

    #[test]
    fn non_psd_reports_eigenvalue() {
        // Symmetric, in-range correlations, but not PSD: rho_XY = rho_YZ1 = 0.9
        // with rho_XZ1 = -0.9 is contradictory.
        let src = GaussianJointSource::from_correlations(
            [0.0; 4],
            [1.0, 1.0, 1.0, 1.0],
            &[((0, 1), 0.9), ((1, 2), 0.9), ((0, 2), -0.9)],
        );
        match src {
            Err(SourceError::NotPsd { value, .. }) => assert!(value < 0.0),
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }

    #[test]
    fn empirical_covariance_within_five_standard_errors() {
        let src = GaussianJointSource::paper_preset();
        let n = 100_000usize;
        let ds = sample_gaussian(&src, n, 0.8, 11).unwrap();
        let vars = [VarName::X, VarName::Y, VarName::Z1, VarName::Z2];
        let nf = n as f64;
        let means: Vec<f64> = vars
            .iter()
            .map(|&v| ds.records.iter().map(|r| r.get(v)).sum::<f64>() / nf)
            .collect();
        for i in 0..4 {
            for j in i..4 {
                let mut c = 0.0;
                for rec in &ds.records {
                    c += (rec.get(vars[i]) - means[i]) * (rec.get(vars[j]) - means[j]);
                }
                c /= nf - 1.0;
                let se =
                    ((src.cov[i][i] * src.cov[j][j] + src.cov[i][j] * src.cov[i][j]) / nf).sqrt();
                assert!(
                    (c - src.cov[i][j]).abs() < 5.0 * se,
                    "cov({i},{j}): {c} vs {} (se {se})",
                    src.cov[i][j]
                );
            }
        }
    }

    #[test]
    fn binary_crossover_rate_matches() {
        let src = BinarySource {
            p: 0.54,
            q_y: 0.2,
            q_z1: 0.44,
            q_z2: 0.44,
        };
        let ds = sample_binary(&src, 100_000, 0.8, 3).unwrap();
        let n = ds.records.len() as f64;
        let flips = ds.records.iter().filter(|r| r.y != r.x).count() as f64 / n;
        assert!((flips - 0.2).abs() < 0.01, "Pr(y != x) = {flips}");
    }

    #[test]
    fn degenerate_prior_yields_all_ones() {
        let src = BinarySource {
            p: 1.0,
            q_y: 0.3,
            q_z1: 0.3,
            q_z2: 0.3,
        };
        let ds = sample_binary(&src, 100, 0.5, 9).unwrap();
        assert!(ds.records.iter().all(|r| r.x == 1.0));
    }

    #[test]
    fn fully_noisy_channel_decorrelates() {
        let src = BinarySource {
            p: 0.5,
            q_y: 0.5,
            q_z1: 0.1,
            q_z2: 0.1,
        };
        let ds = sample_binary(&src, 100_000, 0.8, 5).unwrap();
        let rho = empirical_correlation(&ds, VarName::X, VarName::Y).unwrap();
        assert!(rho.abs() < 0.02, "rho = {rho}");
    }

    #[test]
    fn paper_binary_correlations() {
        let src = BinarySource::paper_preset();
        let ds = sample_binary(&src, 100_000, 0.8, 13).unwrap();
        let rxy = empirical_correlation(&ds, VarName::X, VarName::Y).unwrap();
        let rxz = empirical_correlation(&ds, VarName::X, VarName::Z1).unwrap();
        assert!((rxy - 0.6).abs() < 0.02, "rho_xy = {rxy}");
        assert!((rxz - 0.12).abs() < 0.02, "rho_xz = {rxz}");
    }

    #[test]
    fn self_correlation_is_one() {
        let ds = sample_binary(&BinarySource::paper_preset(), 1000, 0.8, 1).unwrap();
        assert_eq!(
            empirical_correlation(&ds, VarName::X, VarName::X).unwrap(),
            1.0
        );
    }

    #[test]
    fn probability_outside_unit_interval_is_rejected() {
        let src = BinarySource {
            p: 0.5,
            q_y: 1.5,
            q_z1: 0.1,
            q_z2: 0.1,
        };
        assert!(sample_binary(&src, 10, 0.5, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let src = GaussianJointSource::paper_preset();
        let a = sample_gaussian(&src, 500, 0.8, 99).unwrap();
        let b = sample_gaussian(&src, 500, 0.8, 99).unwrap();
        assert_eq!(a, b);
        let bs = BinarySource::paper_preset();
        let a = sample_binary(&bs, 500, 0.8, 99).unwrap();
        let b = sample_binary(&bs, 500, 0.8, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_column_is_independent() {
        for ds in [
            sample_gaussian(&GaussianJointSource::paper_preset(), 100_000, 0.8, 21).unwrap(),
            sample_binary(&BinarySource::paper_preset(), 100_000, 0.8, 22).unwrap(),
        ] {
            for var in [VarName::X, VarName::Y, VarName::Z1, VarName::Z2] {
                let rho = empirical_correlation(&ds, VarName::R, var).unwrap();
                assert!(rho.abs() < 0.02, "corr(r, {var}) = {rho}");
            }
        }
    }

    #[test]
    fn split_index_respects_fraction() {
        let ds = sample_binary(&BinarySource::paper_preset(), 12_000, 10_000.0 / 12_000.0, 0)
            .unwrap();
        assert_eq!(ds.split_index, 10_000);
        assert_eq!(ds.train().len(), 10_000);
        assert_eq!(ds.test().len(), 2_000);
    }

    #[test]
    fn csv_round_trip_header_and_rows() {
        let ds = sample_binary(&BinarySource::paper_preset(), 5, 0.6, 4).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,z1,z2,r"));
        assert_eq!(lines.count(), 5);
    }
}
