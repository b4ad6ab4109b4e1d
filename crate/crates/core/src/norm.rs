//! Batch, layer, global and cross normalization of a `C × T` activation
//! matrix (channels × samples).
//!
//! Each transform standardizes `h` with a mean `μ` and a root-variance `σ`
//! drawn from a different scope and then applies the per-channel affine map
//! `γ_i · x̂ + β_i`:
//!
//! | kind | statistics of entry `(i, t)` drawn from |
//! |------|-----------------------------------------|
//! | BN   | row `i` (all samples of a channel)      |
//! | LN   | column `t` (all channels of a sample)   |
//! | GN   | the whole matrix                        |
//! | CN   | row `i` and column `t` together         |
//!
//! Variances are population variances and `σ = sqrt(var + ε)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{dim_err, Error, Result};
use crate::linalg::DenseMatrix;

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NormKind {
    None,
    Batch,
    Layer,
    Global,
    Cross,
}

impl NormKind {
    pub const ALL: [NormKind; 5] =
        [NormKind::None, NormKind::Batch, NormKind::Layer, NormKind::Global, NormKind::Cross];

    pub fn label(self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::Batch => "bn",
            NormKind::Layer => "ln",
            NormKind::Global => "gn",
            NormKind::Cross => "cn",
        }
    }

    /// Whether samples are coupled through the statistics.
    pub fn couples_samples(self) -> bool {
        matches!(self, NormKind::Batch | NormKind::Global | NormKind::Cross)
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(NormKind::None),
            "bn" | "batch" => Ok(NormKind::Batch),
            "ln" | "layer" => Ok(NormKind::Layer),
            "gn" | "global" => Ok(NormKind::Global),
            "cn" | "cross" => Ok(NormKind::Cross),
            other => Err(Error::InvalidArgument(format!("unknown normalization '{other}'"))),
        }
    }
}

/// Mean and root-variance matrices, both `C × T`, of one normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub kind: NormKind,
    pub mean: DenseMatrix,
    /// `σ = sqrt(var + ε)` per entry.
    pub std: DenseMatrix,
    pub eps: f64,
}

/// Standardized values `x̂ = (h - μ)/σ` with their statistics.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub xhat: DenseMatrix,
    pub stats: NormStats,
}

fn check_affine(h: &DenseMatrix, gamma: &[f64], beta: &[f64]) -> Result<()> {
    if gamma.len() != h.rows() || beta.len() != h.rows() {
        return dim_err(format!(
            "gamma/beta of length {}/{} for {} channels",
            gamma.len(),
            beta.len(),
            h.rows()
        ));
    }
    Ok(())
}

fn apply_affine(xhat: &DenseMatrix, gamma: &[f64], beta: &[f64]) -> DenseMatrix {
    let mut out = xhat.clone();
    for (i, (g, b)) in gamma.iter().zip(beta).enumerate() {
        for v in out.row_mut(i) {
            *v = g * *v + b;
        }
    }
    out
}

fn mean_and_var(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var)
}

/// Standardize without the affine map.
pub fn standardize(kind: NormKind, h: &DenseMatrix, eps: f64) -> Result<Standardized> {
    let (c, t) = h.shape();
    let mut mean = DenseMatrix::zeros(c, t);
    let mut std = DenseMatrix::zeros(c, t);
    match kind {
        NormKind::None => {
            return Err(Error::InvalidArgument("standardize with NormKind::None".into()));
        }
        NormKind::Batch => {
            if t < 2 {
                return Err(Error::DegenerateBatch(t));
            }
            for i in 0..c {
                let row = h.row(i);
                let (mu, var) = mean_and_var(row.iter().copied(), t);
                let sd = (var + eps).sqrt();
                mean.row_mut(i).fill(mu);
                std.row_mut(i).fill(sd);
            }
        }
        NormKind::Layer => {
            if c < 2 {
                return Err(Error::DegenerateChannel(c));
            }
            for s in 0..t {
                let (mu, var) = mean_and_var((0..c).map(|i| h[(i, s)]), c);
                let sd = (var + eps).sqrt();
                for i in 0..c {
                    mean[(i, s)] = mu;
                    std[(i, s)] = sd;
                }
            }
        }
        NormKind::Global => {
            if c * t < 2 {
                return Err(Error::InvalidArgument(format!(
                    "global normalization needs at least two entries, got {}",
                    c * t
                )));
            }
            let (mu, var) = mean_and_var(h.as_slice().iter().copied(), c * t);
            let sd = (var + eps).sqrt();
            mean.as_mut_slice().fill(mu);
            std.as_mut_slice().fill(sd);
        }
        NormKind::Cross => {
            if c + t < 3 {
                return Err(Error::InvalidArgument(format!(
                    "cross normalization needs C + T >= 3, got {}",
                    c + t
                )));
            }
            let sums = CrossSums::new(h);
            let denom = (c + t) as f64;
            for i in 0..c {
                for s in 0..t {
                    let mu = (sums.col[s] + sums.row[i]) / denom;
                    let second = (sums.col_sq[s] + sums.row_sq[i]) / denom;
                    let var = (second - mu * mu).max(0.0);
                    mean[(i, s)] = mu;
                    std[(i, s)] = (var + eps).sqrt();
                }
            }
        }
    }
    let mut xhat = h.clone();
    for ((x, m), s) in xhat.as_mut_slice().iter_mut().zip(mean.as_slice()).zip(std.as_slice()) {
        *x = (*x - m) / s;
    }
    Ok(Standardized { xhat, stats: NormStats { kind, mean, std, eps } })
}

/// Row and column sums (plain and squared) used by cross normalization.
struct CrossSums {
    row: Vec<f64>,
    row_sq: Vec<f64>,
    col: Vec<f64>,
    col_sq: Vec<f64>,
}

impl CrossSums {
    fn new(h: &DenseMatrix) -> Self {
        let (c, t) = h.shape();
        let mut s = CrossSums {
            row: vec![0.0; c],
            row_sq: vec![0.0; c],
            col: vec![0.0; t],
            col_sq: vec![0.0; t],
        };
        for i in 0..c {
            for (n, &v) in h.row(i).iter().enumerate() {
                s.row[i] += v;
                s.row_sq[i] += v * v;
                s.col[n] += v;
                s.col_sq[n] += v * v;
            }
        }
        s
    }
}

/// Apply a normalization with its affine map.
pub fn normalize(
    kind: NormKind,
    h: &DenseMatrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(DenseMatrix, NormStats)> {
    check_affine(h, gamma, beta)?;
    let st = standardize(kind, h, eps)?;
    Ok((apply_affine(&st.xhat, gamma, beta), st.stats))
}

/// Batch normalization: statistics per channel over the samples.
pub fn batch_norm(
    h: &DenseMatrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(DenseMatrix, NormStats)> {
    normalize(NormKind::Batch, h, gamma, beta, eps)
}

/// Layer normalization: statistics per sample over the channels.
pub fn layer_norm(
    h: &DenseMatrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(DenseMatrix, NormStats)> {
    normalize(NormKind::Layer, h, gamma, beta, eps)
}

/// Global normalization: one mean and variance over every entry.
pub fn global_norm(
    h: &DenseMatrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(DenseMatrix, NormStats)> {
    normalize(NormKind::Global, h, gamma, beta, eps)
}

/// Cross normalization: entry `(i, t)` is standardized with the statistics
/// of row `i` and column `t` pooled, dividing by `C + T`. The entry itself
/// is counted in both sums.
pub fn cross_norm(
    h: &DenseMatrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(DenseMatrix, NormStats)> {
    normalize(NormKind::Cross, h, gamma, beta, eps)
}

/// Reverse-mode derivative of [`standardize`]: maps `∂L/∂x̂` to `∂L/∂h`.
pub fn standardize_backward(
    h: &DenseMatrix,
    st: &Standardized,
    grad_xhat: &DenseMatrix,
) -> DenseMatrix {
    let (c, t) = h.shape();
    let xhat = &st.xhat;
    let std = &st.stats.std;
    let mut out = DenseMatrix::zeros(c, t);
    match st.stats.kind {
        NormKind::None => unreachable!("no statistics for NormKind::None"),
        NormKind::Batch => {
            for i in 0..c {
                let g = grad_xhat.row(i);
                let x = xhat.row(i);
                let (gm, gxm) = group_means(g.iter().copied(), x.iter().copied(), t);
                let inv = 1.0 / std[(i, 0)];
                for (o, (gv, xv)) in out.row_mut(i).iter_mut().zip(g.iter().zip(x)) {
                    *o = inv * (gv - gm - xv * gxm);
                }
            }
        }
        NormKind::Layer => {
            for s in 0..t {
                let (gm, gxm) = group_means(
                    (0..c).map(|i| grad_xhat[(i, s)]),
                    (0..c).map(|i| xhat[(i, s)]),
                    c,
                );
                let inv = 1.0 / std[(0, s)];
                for i in 0..c {
                    out[(i, s)] = inv * (grad_xhat[(i, s)] - gm - xhat[(i, s)] * gxm);
                }
            }
        }
        NormKind::Global => {
            let (gm, gxm) = group_means(
                grad_xhat.as_slice().iter().copied(),
                xhat.as_slice().iter().copied(),
                c * t,
            );
            let inv = 1.0 / std[(0, 0)];
            for ((o, gv), xv) in
                out.as_mut_slice().iter_mut().zip(grad_xhat.as_slice()).zip(xhat.as_slice())
            {
                *o = inv * (gv - gm - xv * gxm);
            }
        }
        NormKind::Cross => cross_backward(h, st, grad_xhat, &mut out),
    }
    out
}

fn group_means(
    g: impl Iterator<Item = f64>,
    x: impl Iterator<Item = f64>,
    n: usize,
) -> (f64, f64) {
    let mut sg = 0.0;
    let mut sgx = 0.0;
    for (gv, xv) in g.zip(x) {
        sg += gv;
        sgx += gv * xv;
    }
    (sg / n as f64, sgx / n as f64)
}

// x̂ = (h - μ)/σ with σ² = s - μ² + ε, where μ and s pool row i and column t.
// ∂x̂/∂μ = -1/σ + x̂ μ/σ²,  ∂x̂/∂s = -x̂/(2σ²); both statistics are linear in
// the row/column sums, so the gradient scatters back through those sums.
fn cross_backward(
    h: &DenseMatrix,
    st: &Standardized,
    grad_xhat: &DenseMatrix,
    out: &mut DenseMatrix,
) {
    let (c, t) = h.shape();
    let xhat = &st.xhat;
    let mean = &st.stats.mean;
    let std = &st.stats.std;
    let denom = (c + t) as f64;

    let mut a_row = vec![0.0; c];
    let mut a_col = vec![0.0; t];
    let mut b_row = vec![0.0; c];
    let mut b_col = vec![0.0; t];
    // the variance floor is active when σ² collapsed onto ε
    let floor = st.stats.eps * (1.0 + 4.0 * f64::EPSILON);
    for i in 0..c {
        for s in 0..t {
            let g = grad_xhat[(i, s)];
            let sd = std[(i, s)];
            let x = xhat[(i, s)];
            let floored = sd * sd <= floor;
            let (da, db) = if floored {
                (-g / sd, 0.0)
            } else {
                let var = sd * sd;
                (g * (-1.0 / sd + x * mean[(i, s)] / var), -g * x / (2.0 * var))
            };
            a_row[i] += da;
            a_col[s] += da;
            b_row[i] += db;
            b_col[s] += db;
        }
    }
    for i in 0..c {
        for s in 0..t {
            let direct = grad_xhat[(i, s)] / std[(i, s)];
            let via_mean = (a_row[i] + a_col[s]) / denom;
            let via_second = 2.0 * h[(i, s)] * (b_row[i] + b_col[s]) / denom;
            out[(i, s)] = direct + via_mean + via_second;
        }
    }
}

/// `(scope, degree)` of a normalization on a `C × T` activation.
///
/// Scope counts the entries a given entry's statistics draw on; degree counts
/// the independent (mean, variance) pairs.
pub fn norm_scope_degree(kind: NormKind, channels: usize, samples: usize) -> (usize, usize) {
    match kind {
        NormKind::None => (1, channels * samples),
        NormKind::Batch => (samples, channels),
        NormKind::Layer => (channels, samples),
        NormKind::Global => (channels * samples, 1),
        NormKind::Cross => (channels + samples - 1, channels * samples),
    }
}
