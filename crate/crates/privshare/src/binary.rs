//! Flip-channel privatizer, MAP estimators, and the exact maximin solver.
//!
//! The privatizer keeps a binary bit with probabilities `s0 = Pr(F=0|X=0)`
//! and `s1 = Pr(F=1|X=1)`. An observer of `(F, side)` decodes with the MAP
//! rule; its misclassification probability is a sum of four min-terms, one
//! per `(f, side)` outcome, and is therefore concave piecewise-linear in
//! `(s0, s1)`. The maximin program (maximize the smaller adversary error
//! subject to the reconstructor error staying below `d`) is solved exactly
//! by enumerating every line of the induced arrangement — min-term
//! breakpoints, affine pieces of the constraint boundary, equal-adversary
//! ridges and the box edges — evaluating all pairwise intersections, then
//! refining against an exhaustive grid.

use crate::sources::{BinarySource, SourceError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BinaryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Source(#[from] SourceError),
}

/// Binary privatizer: `s0 = Pr(F=0|X=0)`, `s1 = Pr(F=1|X=1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipChannel {
    pub s0: f64,
    pub s1: f64,
}

impl FlipChannel {
    pub fn new(s0: f64, s1: f64) -> Result<Self, BinaryError> {
        for (name, v) in [("s0", s0), ("s1", s1)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(BinaryError::InvalidArgument(format!(
                    "{name} = {v} is not a probability"
                )));
            }
        }
        Ok(Self { s0, s1 })
    }
}

/// Which adversary attains the maximin value at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActiveAdversary {
    First,
    Second,
    Both,
}

impl std::fmt::Display for ActiveAdversary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActiveAdversary::First => f.write_str("1"),
            ActiveAdversary::Second => f.write_str("2"),
            ActiveAdversary::Both => f.write_str("both"),
        }
    }
}

/// Solution of the maximin program at one distortion threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarySolution {
    /// Optimal maximin adversarial loss.
    pub gamma: f64,
    pub s0_opt: f64,
    pub s1_opt: f64,
    /// Reconstructor loss at the optimum (feasible: at most `d`).
    pub recon_at_opt: f64,
    pub active_adversary: ActiveAdversary,
}

/// MAP misclassification probability of an observer seeing `(F, side)`,
/// expressed as the sum of the four min-terms.
pub fn piecewise_loss(channel: &FlipChannel, p: f64, q: f64) -> f64 {
    four_term_loss(channel.s0, channel.s1, p, q)
}

fn four_term_loss(s0: f64, s1: f64, p: f64, q: f64) -> f64 {
    let a0 = (1.0 - p) * s0; // Pr(X=0, F=0)
    let a1 = p * (1.0 - s1); // Pr(X=1, F=0)
    let b0 = (1.0 - p) * (1.0 - s0); // Pr(X=0, F=1)
    let b1 = p * s1; // Pr(X=1, F=1)
    (a0 * (1.0 - q)).min(a1 * q)
        + (a0 * q).min(a1 * (1.0 - q))
        + (b0 * (1.0 - q)).min(b1 * q)
        + (b0 * q).min(b1 * (1.0 - q))
}

/// MAP estimate of X from the released bit and one side bit. Ties resolve
/// toward 1 so the rule is a fixed deterministic function.
pub fn map_estimate(f: bool, side: bool, channel: &FlipChannel, p: f64, q: f64) -> bool {
    let score = |x: bool| -> f64 {
        let prior = if x { p } else { 1.0 - p };
        let pf = match (x, f) {
            (false, false) => channel.s0,
            (false, true) => 1.0 - channel.s0,
            (true, true) => channel.s1,
            (true, false) => 1.0 - channel.s1,
        };
        let ps = if side == x { 1.0 - q } else { q };
        prior * pf * ps
    };
    score(true) >= score(false)
}

/// Bayes error computed by exhaustive enumeration of the eight outcomes.
/// Independent route used to validate [`piecewise_loss`].
pub fn map_error_bruteforce(channel: &FlipChannel, p: f64, q: f64) -> f64 {
    let mut err = 0.0;
    for x in [false, true] {
        let prior = if x { p } else { 1.0 - p };
        for f in [false, true] {
            let pf = match (x, f) {
                (false, false) => channel.s0,
                (false, true) => 1.0 - channel.s0,
                (true, true) => channel.s1,
                (true, false) => 1.0 - channel.s1,
            };
            for side in [false, true] {
                let ps = if side == x { 1.0 - q } else { q };
                if map_estimate(f, side, channel, p, q) != x {
                    err += prior * pf * ps;
                }
            }
        }
    }
    err
}

/// Affine function `a*s0 + b*s1 + c` on the unit square.
#[derive(Debug, Clone, Copy)]
struct Affine {
    a: f64,
    b: f64,
    c: f64,
}

impl Affine {
    fn sub(self, o: Affine) -> Affine {
        Affine {
            a: self.a - o.a,
            b: self.b - o.b,
            c: self.c - o.c,
        }
    }
}

/// Line `a*s0 + b*s1 = c`.
#[derive(Debug, Clone, Copy)]
struct Line {
    a: f64,
    b: f64,
    c: f64,
}

impl Line {
    fn from_level(f: Affine, level: f64) -> Line {
        Line {
            a: f.a,
            b: f.b,
            c: level - f.c,
        }
    }

    fn is_degenerate(&self) -> bool {
        self.a.abs() + self.b.abs() < 1e-13
    }

    fn intersect(&self, o: &Line) -> Option<(f64, f64)> {
        let det = self.a * o.b - o.a * self.b;
        if det.abs() < 1e-13 {
            return None;
        }
        Some((
            (self.c * o.b - o.c * self.b) / det,
            (self.a * o.c - o.a * self.c) / det,
        ))
    }
}

/// The two affine branches of each of the four min-terms for loss
/// parameters (p, q). Branch order matches the term order of the loss.
fn term_branches(p: f64, q: f64) -> [(Affine, Affine); 4] {
    let w0 = 1.0 - p;
    [
        (
            Affine { a: w0 * (1.0 - q), b: 0.0, c: 0.0 },
            Affine { a: 0.0, b: -p * q, c: p * q },
        ),
        (
            Affine { a: w0 * q, b: 0.0, c: 0.0 },
            Affine { a: 0.0, b: -p * (1.0 - q), c: p * (1.0 - q) },
        ),
        (
            Affine { a: -w0 * (1.0 - q), b: 0.0, c: w0 * (1.0 - q) },
            Affine { a: 0.0, b: p * q, c: 0.0 },
        ),
        (
            Affine { a: -w0 * q, b: 0.0, c: w0 * q },
            Affine { a: 0.0, b: p * (1.0 - q), c: 0.0 },
        ),
    ]
}

/// All 16 affine branch combinations of one four-min-term loss.
fn loss_branches(p: f64, q: f64) -> Vec<Affine> {
    let terms = term_branches(p, q);
    let mut out = Vec::with_capacity(16);
    for mask in 0..16u32 {
        let mut f = Affine { a: 0.0, b: 0.0, c: 0.0 };
        for (t, pair) in terms.iter().enumerate() {
            let choice = if mask & (1 << t) == 0 { pair.0 } else { pair.1 };
            f.a += choice.a;
            f.b += choice.b;
            f.c += choice.c;
        }
        out.push(f);
    }
    out
}

/// Breakpoint lines (branch switches) of one loss.
fn breakpoint_lines(p: f64, q: f64) -> Vec<Line> {
    term_branches(p, q)
        .iter()
        .map(|&(u, v)| {
            let d = u.sub(v);
            Line { a: d.a, b: d.b, c: -d.c }
        })
        .filter(|l| !l.is_degenerate())
        .collect()
}

struct Losses {
    p: f64,
    q_y: f64,
    q_z1: f64,
    q_z2: f64,
}

impl Losses {
    fn recon(&self, s0: f64, s1: f64) -> f64 {
        four_term_loss(s0, s1, self.p, self.q_y)
    }
    fn adv(&self, s0: f64, s1: f64) -> (f64, f64) {
        (
            four_term_loss(s0, s1, self.p, self.q_z1),
            four_term_loss(s0, s1, self.p, self.q_z2),
        )
    }
}

/// Solves the maximin program exactly, then verifies/refines against an
/// exhaustive grid with `resolution` steps per axis.
pub fn solve_binary(
    source: &BinarySource,
    d: f64,
    resolution: usize,
) -> Result<BinarySolution, BinaryError> {
    source.validate()?;
    if !(0.0..=0.5).contains(&d) {
        return Err(BinaryError::InvalidArgument(format!(
            "distortion threshold must lie in [0, 0.5], got {d}"
        )));
    }
    if resolution < 2 {
        return Err(BinaryError::InvalidArgument(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    let losses = Losses {
        p: source.p,
        q_y: source.q_y,
        q_z1: source.q_z1,
        q_z2: source.q_z2,
    };

    let mut lines: Vec<Line> = Vec::new();
    // Box edges.
    lines.push(Line { a: 1.0, b: 0.0, c: 0.0 });
    lines.push(Line { a: 1.0, b: 0.0, c: 1.0 });
    lines.push(Line { a: 0.0, b: 1.0, c: 0.0 });
    lines.push(Line { a: 0.0, b: 1.0, c: 1.0 });
    // Min-term breakpoints of each loss.
    for q in [source.q_y, source.q_z1, source.q_z2] {
        lines.extend(breakpoint_lines(source.p, q));
    }
    // Constraint boundary: every affine piece of the reconstructor loss at level d.
    for branch in loss_branches(source.p, source.q_y) {
        let l = Line::from_level(branch, d);
        if !l.is_degenerate() {
            lines.push(l);
        }
    }
    // Equal-adversary ridges: pairwise differences of the two adversaries'
    // affine pieces. Degenerate when the adversaries are identical.
    let a1b = loss_branches(source.p, source.q_z1);
    let a2b = loss_branches(source.p, source.q_z2);
    for f1 in &a1b {
        for f2 in &a2b {
            let diff = f1.sub(*f2);
            let l = Line { a: diff.a, b: diff.b, c: -diff.c };
            if !l.is_degenerate() {
                lines.push(l);
            }
        }
    }

    let feas_tol = 1e-12;
    let mut best: Option<(f64, f64, f64)> = None; // (gamma, s0, s1)
    let mut consider = |s0: f64, s1: f64| {
        if !(-1e-9..=1.0 + 1e-9).contains(&s0) || !(-1e-9..=1.0 + 1e-9).contains(&s1) {
            return;
        }
        let s0 = s0.clamp(0.0, 1.0);
        let s1 = s1.clamp(0.0, 1.0);
        if losses.recon(s0, s1) > d + feas_tol {
            return;
        }
        let (l1, l2) = losses.adv(s0, s1);
        let gamma = l1.min(l2);
        if best.map_or(true, |(g, _, _)| gamma > g) {
            best = Some((gamma, s0, s1));
        }
    };

    for corner in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
        consider(corner.0, corner.1);
    }
    for i in 0..lines.len() {
        for j in (i + 1)..lines.len() {
            if let Some((s0, s1)) = lines[i].intersect(&lines[j]) {
                consider(s0, s1);
            }
        }
    }

    // Grid verification/refinement pass.
    let step = 1.0 / resolution as f64;
    for i in 0..=resolution {
        let s0 = i as f64 * step;
        for j in 0..=resolution {
            consider(s0, j as f64 * step);
        }
    }

    let (gamma, s0_opt, s1_opt) =
        best.expect("s0 = s1 = 1 is always feasible: the recon loss there is 0");
    let (l1, l2) = losses.adv(s0_opt, s1_opt);
    let active_adversary = if (l1 - l2).abs() <= 1e-12 {
        ActiveAdversary::Both
    } else if l1 < l2 {
        ActiveAdversary::First
    } else {
        ActiveAdversary::Second
    };
    Ok(BinarySolution {
        gamma,
        s0_opt,
        s1_opt,
        recon_at_opt: losses.recon(s0_opt, s1_opt),
        active_adversary,
    })
}

/// One exact solve per grid value; the grid must be ascending.
pub fn tradeoff_curve_binary(
    source: &BinarySource,
    d_grid: &[f64],
    resolution: usize,
) -> Result<Vec<BinarySolution>, BinaryError> {
    if d_grid.is_empty() {
        return Err(BinaryError::InvalidArgument("empty distortion grid".into()));
    }
    if d_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(BinaryError::InvalidArgument(
            "distortion grid must be sorted ascending".into(),
        ));
    }
    d_grid
        .iter()
        .map(|&d| solve_binary(source, d, resolution))
        .collect()
}
