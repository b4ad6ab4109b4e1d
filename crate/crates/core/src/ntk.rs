//! Empirical neural tangent kernels and their spectra.
//!
//! Kernel rows and columns use the Jacobian's sample-major output order,
//! `a = t·C + i`. For a kernel of size `n = T·C` with eigenvalues `λ`:
//!
//! * `m_λ = tr(K)/n` and `s_λ = ‖K‖_F²/n` are the first two spectral
//!   moments, `v_λ = s_λ − m_λ²` the variance;
//! * `s_λ/m_λ ≤ λ_max ≤ √(n·s_λ)` brackets the largest eigenvalue.
//!
//! The chain kernels express the kernel of a network whose last layer is
//! batch- or layer-normalized through the Jacobian of the pre-normalization
//! output, differentiating the standardization through its mean and
//! variance.

use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::grad::{param_jacobian, ParamJacobian};
use crate::linalg::{dot, sym_eig, DenseMatrix, SymEigDecomp};
use crate::net::{NetworkConfig, NetworkParams};
use crate::norm::{standardize, NormKind};

/// Largest kernel side (`T·C`) accepted.
pub const MAX_KERNEL_SIZE: usize = 2048;

/// Relative tolerance of the trace-versus-eigenvalue cross-check.
pub const MOMENT_TOL: f64 = 1e-8;

/// Eigenvalues below this fraction of `λ_max` are numerical zeros.
pub const ZERO_EIGEN_FRACTION: f64 = 1e-12;

pub fn check_kernel_size(channels: usize, samples: usize) -> Result<()> {
    let size = channels * samples;
    if size > MAX_KERNEL_SIZE {
        return Err(Error::SizeCap { size, cap: MAX_KERNEL_SIZE });
    }
    Ok(())
}

/// A `(T·C) × (T·C)` kernel with its block structure.
#[derive(Debug, Clone, PartialEq)]
pub struct NtkMatrix {
    k: DenseMatrix,
    channels: usize,
    samples: usize,
}

impl NtkMatrix {
    pub fn new(k: DenseMatrix, channels: usize, samples: usize) -> Result<Self> {
        if k.shape() != (channels * samples, channels * samples) {
            return dim_err(format!("kernel {:?} for {channels} channels x {samples} samples", k.shape()));
        }
        check_kernel_size(channels, samples)?;
        Ok(Self { k, channels, samples })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.k
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn size(&self) -> usize {
        self.k.rows()
    }

    /// `K_{i,j,s,t}`: sample `s` of channel `i` against sample `t` of channel `j`.
    pub fn element(&self, i: usize, j: usize, s: usize, t: usize) -> f64 {
        self.k[(s * self.channels + i, t * self.channels + j)]
    }
}

/// `K = JᵀJ`, built row by row from the upper triangle so it is exactly symmetric.
pub fn empirical_ntk(j: &ParamJacobian) -> Result<NtkMatrix> {
    check_kernel_size(j.channels(), j.samples())?;
    let g = j.by_output();
    let n = g.rows();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| (a..n).map(|b| dot(g.row(a), g.row(b))).collect())
        .collect();
    let mut k = DenseMatrix::zeros(n, n);
    for (a, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            k[(a, a + off)] = v;
            k[(a + off, a)] = v;
        }
    }
    NtkMatrix::new(k, j.channels(), j.samples())
}

/// Empirical kernel of a network on `x`, refusing oversized kernels before any work.
pub fn network_ntk(params: &NetworkParams, x: &DenseMatrix, config: &NetworkConfig) -> Result<NtkMatrix> {
    check_kernel_size(config.output_dim, x.cols())?;
    empirical_ntk(&param_jacobian(params, x, config)?)
}

/// Log10-spaced histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges in log10 units.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Center of the fullest bin (first one on ties).
    pub fn mode_center(&self) -> Option<f64> {
        let (best, _) = self.counts.iter().enumerate().fold((None, 0usize), |(b, c), (k, &n)| {
            if n > c { (Some(k), n) } else { (b, c) }
        });
        best.map(|k| 0.5 * (self.edges[k] + self.edges[k + 1]))
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Histogram of `log10(v)` over `[lo, hi]`; values outside the range are dropped.
pub fn log10_histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::InvalidArgument(format!("histogram needs bins > 0 and hi > lo ({bins}, {lo}, {hi})")));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        if v <= 0.0 {
            continue;
        }
        let l = v.log10();
        if l < lo || l > hi {
            continue;
        }
        counts[(((l - lo) / width) as usize).min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSummary {
    pub size: usize,
    /// `m_λ` from the trace.
    pub mean: f64,
    /// `s_λ` from the Frobenius norm.
    pub second_moment: f64,
    /// `v_λ = s_λ − m_λ²`.
    pub variance: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    /// `s_λ / m_λ`.
    pub lower_bound: f64,
    /// `√(n·s_λ)`.
    pub upper_bound: f64,
    /// Median of `log10 λ`, with eigenvalues clamped at `1e-12·λ_max`.
    pub median_log10: f64,
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Histogram of eigenvalues at or above `1e-12·λ_max`.
    pub histogram: Histogram,
}

impl EigenSummary {
    /// Does `s_λ/m_λ ≤ λ_max ≤ √(n·s_λ)` hold with relative slack?
    pub fn sandwich_holds(&self, slack: f64) -> bool {
        self.lower_bound <= self.lambda_max * (1.0 + slack) && self.lambda_max <= self.upper_bound * (1.0 + slack)
    }

    pub fn is_psd(&self) -> bool {
        self.lambda_min >= -1e-8 * self.lambda_max.abs()
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 { 0.0 } else { (a - b).abs() / scale }
}

/// Spectral statistics, cross-checking the trace route against the eigenvalues.
pub fn eigen_summary(k: &NtkMatrix, hist_bins: usize) -> Result<EigenSummary> {
    let n = k.size();
    if n == 0 {
        return Err(Error::InvalidArgument("empty kernel".into()));
    }
    let m = k.matrix();
    let nf = n as f64;
    let mean = m.trace() / nf;
    let fro = m.frobenius_norm();
    let second_moment = fro * fro / nf;
    let dec = sym_eig(m)?;
    let ev = dec.eigenvalues;
    let mean_eig = ev.iter().sum::<f64>() / nf;
    let second_eig = ev.iter().map(|l| l * l).sum::<f64>() / nf;
    // absolute floor keeps an all-zero kernel from tripping the check
    let floor = 1e-300;
    if rel_gap(mean, mean_eig) > MOMENT_TOL && (mean - mean_eig).abs() > floor {
        return Err(Error::Consistency(format!("m_λ: trace {mean:e} vs eigenvalues {mean_eig:e}")));
    }
    if rel_gap(second_moment, second_eig) > MOMENT_TOL && (second_moment - second_eig).abs() > floor {
        return Err(Error::Consistency(format!("s_λ: Frobenius {second_moment:e} vs eigenvalues {second_eig:e}")));
    }
    let lambda_max = *ev.last().unwrap();
    let lambda_min = ev[0];
    let clamp = ZERO_EIGEN_FRACTION * lambda_max.max(0.0);
    let logs: Vec<f64> = ev.iter().map(|&l| l.max(clamp).max(f64::MIN_POSITIVE).log10()).collect();
    let median_log10 = if n % 2 == 1 { logs[n / 2] } else { 0.5 * (logs[n / 2 - 1] + logs[n / 2]) };
    let kept: Vec<f64> = ev.iter().copied().filter(|&l| l >= clamp && l > 0.0).collect();
    let histogram = match (kept.first(), kept.last()) {
        (Some(&lo), Some(&hi)) if hi > lo => log10_histogram(&kept, hist_bins.max(1), lo.log10(), hi.log10())?,
        (Some(&v), _) => log10_histogram(&kept, hist_bins.max(1), v.log10() - 0.5, v.log10() + 0.5)?,
        _ => Histogram { edges: vec![0.0, 1.0], counts: vec![0] },
    };
    Ok(EigenSummary {
        size: n,
        mean,
        second_moment,
        variance: second_moment - mean * mean,
        lambda_max,
        lambda_min,
        lower_bound: if mean > 0.0 { second_moment / mean } else { 0.0 },
        upper_bound: (nf * second_moment).sqrt(),
        median_log10,
        eigenvalues: ev,
        histogram,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaEstimate {
    /// Mean diagonal entry over the width.
    pub kappa1: f64,
    /// Mean same-channel off-diagonal entry over the width.
    pub kappa2: f64,
    pub width: usize,
}

/// Estimate `κ₁`, `κ₂` from a plain network's kernel.
pub fn estimate_kappa(k: &NtkMatrix, width: usize) -> Result<KappaEstimate> {
    if width == 0 {
        return Err(Error::InvalidArgument("width must be >= 1".into()));
    }
    let (c, t) = (k.channels(), k.samples());
    let (mut diag, mut off) = (0.0, 0.0);
    for i in 0..c {
        for s in 0..t {
            for u in 0..t {
                let v = k.element(i, i, s, u);
                if s == u { diag += v } else { off += v }
            }
        }
    }
    let nd = (c * t) as f64;
    let no = (c * t * t.saturating_sub(1)) as f64;
    let w = width as f64;
    Ok(KappaEstimate { kappa1: diag / nd / w, kappa2: if no > 0.0 { off / no / w } else { 0.0 }, width })
}

/// Which statistic a projector centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectorKind {
    Batch,
    Layer,
}

/// Mean-subtraction projector `G` and the variance-division coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct NormProjectors {
    pub kind: ProjectorKind,
    pub channels: usize,
    pub samples: usize,
    /// `(T·C) × (T·C)`, symmetric and idempotent.
    pub g: DenseMatrix,
}

fn projector(kind: ProjectorKind, channels: usize, samples: usize) -> Result<NormProjectors> {
    if channels == 0 || samples == 0 {
        return Err(Error::InvalidArgument("projector needs C, T >= 1".into()));
    }
    let n = channels * samples;
    let g = DenseMatrix::from_fn(n, n, |a, b| {
        let (s, i) = (a / channels, a % channels);
        let (t, j) = (b / channels, b % channels);
        match kind {
            ProjectorKind::Batch if i == j => f64::from(u8::from(s == t)) - 1.0 / samples as f64,
            ProjectorKind::Layer if s == t => f64::from(u8::from(i == j)) - 1.0 / channels as f64,
            _ => 0.0,
        }
    });
    Ok(NormProjectors { kind, channels, samples, g })
}

/// `G[(s,i),(t,j)] = δ_ij (δ_st − 1/T)`.
pub fn bn_projector(channels: usize, samples: usize) -> Result<NormProjectors> {
    projector(ProjectorKind::Batch, channels, samples)
}

/// `G[(s,i),(t,j)] = δ_st (δ_ij − 1/C)`.
pub fn ln_projector(channels: usize, samples: usize) -> Result<NormProjectors> {
    projector(ProjectorKind::Layer, channels, samples)
}

impl NormProjectors {
    /// Coefficients `1/(σ_a σ_b)` of the variance division, indexed like the kernel.
    ///
    /// `std` is `C × T` as stored in the normalization statistics.
    pub fn variance_coefficients(&self, std: &DenseMatrix) -> Result<DenseMatrix> {
        if std.shape() != (self.channels, self.samples) {
            return dim_err(format!("std {:?} for {}x{}", std.shape(), self.channels, self.samples));
        }
        let c = self.channels;
        let n = c * self.samples;
        Ok(DenseMatrix::from_fn(n, n, |a, b| {
            let (s, i) = (a / c, a % c);
            let (t, j) = (b / c, b % c);
            1.0 / (std[(i, s)] * std[(j, t)])
        }))
    }

    /// Factored kernel `A ∘ (GᵀKG)` with `A` applied entrywise.
    ///
    /// This keeps only the mean-subtraction and the diagonal scaling; it
    /// drops the variance derivative, so it differs from the chain kernel.
    pub fn factored_kernel(&self, k: &NtkMatrix, std: &DenseMatrix) -> Result<DenseMatrix> {
        let a = self.variance_coefficients(std)?;
        let gkg = self.g.matmul_tn(k.matrix())?.matmul(&self.g)?;
        let mut out = gkg;
        for (v, w) in out.as_mut_slice().iter_mut().zip(a.as_slice()) {
            *v *= w;
        }
        Ok(out)
    }
}

/// `J·G` for a Jacobian and projector of matching size.
pub fn project_jacobian(j: &ParamJacobian, p: &NormProjectors) -> Result<DenseMatrix> {
    if j.channels() != p.channels || j.samples() != p.samples {
        return dim_err("Jacobian and projector sizes differ");
    }
    j.to_matrix().matmul(&p.g)
}

/// Sample-major flattening of a `C × T` matrix (`t·C + i`).
pub fn flatten_sample_major(m: &DenseMatrix) -> Vec<f64> {
    let (c, t) = m.shape();
    let mut out = vec![0.0; c * t];
    for i in 0..c {
        for s in 0..t {
            out[s * c + i] = m[(i, s)];
        }
    }
    out
}

/// Derivative of the standardized output with respect to the pre-norm output,
/// as a `(T·C) × (T·C)` matrix `M[out, in]`, plus the standardized values.
fn standardization_derivative(kind: NormKind, h: &DenseMatrix, eps: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    let st = standardize(kind, h, eps)?;
    let (c, t) = h.shape();
    for (a, s) in st.stats.std.as_slice().iter().enumerate() {
        if s * s <= eps * (1.0 + 4.0 * f64::EPSILON) {
            return Err(Error::DegenerateStatistics(format!(
                "std {s:e} at statistic {a} is at the epsilon floor"
            )));
        }
    }
    let x = &st.xhat;
    let sd = &st.stats.std;
    let n = c * t;
    let mut m = DenseMatrix::zeros(n, n);
    match kind {
        NormKind::Batch => {
            let tf = t as f64;
            for i in 0..c {
                let sigma = sd[(i, 0)];
                for u in 0..t {
                    for s in 0..t {
                        let delta = f64::from(u8::from(u == s));
                        m[(u * c + i, s * c + i)] = (delta - 1.0 / tf) / sigma - x[(i, u)] * x[(i, s)] / (tf * sigma);
                    }
                }
            }
        }
        NormKind::Layer => {
            let cf = c as f64;
            for u in 0..t {
                let sigma = sd[(0, u)];
                for i in 0..c {
                    for j in 0..c {
                        let delta = f64::from(u8::from(i == j));
                        m[(u * c + i, u * c + j)] = (delta - 1.0 / cf) / sigma - x[(i, u)] * x[(j, u)] / (cf * sigma);
                    }
                }
            }
        }
        other => return Err(Error::InvalidArgument(format!("no chain kernel for {other}"))),
    }
    Ok((m, st.xhat))
}

fn chain_kernel(kind: NormKind, j_h: &ParamJacobian, h: &DenseMatrix, eps: f64, affine: bool) -> Result<NtkMatrix> {
    if h.shape() != (j_h.channels(), j_h.samples()) {
        return dim_err(format!(
            "pre-norm output {:?} for a Jacobian over {}x{} outputs",
            h.shape(),
            j_h.channels(),
            j_h.samples()
        ));
    }
    let (c, t) = h.shape();
    let k_h = empirical_ntk(j_h)?;
    let (d, xhat) = standardization_derivative(kind, h, eps)?;
    let mut k = d.matmul(k_h.matrix())?.matmul_nt(&d)?;
    if affine {
        // ∂o_{i,t}/∂γ_j = δ_ij x̂_{i,t},  ∂o_{i,t}/∂β_j = δ_ij
        for s in 0..t {
            for u in 0..t {
                for i in 0..c {
                    k[(s * c + i, u * c + i)] += xhat[(i, s)] * xhat[(i, u)] + 1.0;
                }
            }
        }
    }
    // symmetric by construction; remove the last-ulp asymmetry of the products
    let n = c * t;
    for a in 0..n {
        for b in a + 1..n {
            let v = 0.5 * (k[(a, b)] + k[(b, a)]);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    NtkMatrix::new(k, c, t)
}

/// Kernel of `γ ∘ BN(H) + β` at `γ = 1, β = 0`, from the Jacobian of `H`.
///
/// The result includes the contribution of `γ` and `β` themselves, so it
/// equals the empirical kernel of the composed network.
pub fn ntk_bn_chain(j_h: &ParamJacobian, h: &DenseMatrix, eps: f64) -> Result<NtkMatrix> {
    chain_kernel(NormKind::Batch, j_h, h, eps, true)
}

/// Layer-normalized analog of [`ntk_bn_chain`].
pub fn ntk_ln_chain(j_h: &ParamJacobian, h: &DenseMatrix, eps: f64) -> Result<NtkMatrix> {
    chain_kernel(NormKind::Layer, j_h, h, eps, true)
}

/// Chain kernel without the `γ`, `β` contribution.
pub fn ntk_chain_without_affine(kind: NormKind, j_h: &ParamJacobian, h: &DenseMatrix, eps: f64) -> Result<NtkMatrix> {
    chain_kernel(kind, j_h, h, eps, false)
}

/// NTK-model prediction of training under gradient flow.
#[derive(Debug, Clone, PartialEq)]
pub struct NtkPrediction {
    /// `(I − e^{−ηαK}) Y`, sample-major.
    pub outputs: Vec<f64>,
    /// `−e^{−ηαΛ} QᵀY`, one entry per eigenvalue in ascending order.
    pub mode_residuals: Vec<f64>,
    /// Whether `η·λ_max < 2`.
    pub stable: bool,
}

/// Prediction from a precomputed eigendecomposition; negative eigenvalues are treated as 0.
pub fn predict_from_decomposition(dec: &SymEigDecomp, y: &[f64], eta: f64, alpha: f64) -> Result<NtkPrediction> {
    if !(eta >= 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("η and α must be >= 0 (got {eta}, {alpha})")));
    }
    let n = dec.eigenvalues.len();
    if y.len() != n {
        return dim_err(format!("{} targets for a kernel of size {n}", y.len()));
    }
    let coeffs = dec.project(y);
    let decay: Vec<f64> = dec.eigenvalues.iter().map(|&l| (-eta * alpha * l.max(0.0)).exp()).collect();
    let mode_residuals: Vec<f64> = coeffs.iter().zip(&decay).map(|(c, d)| -d * c).collect();
    // Y + Q·residual
    let q = &dec.eigenvectors;
    let outputs: Vec<f64> = (0..n)
        .map(|a| y[a] + (0..n).map(|k| q[(a, k)] * mode_residuals[k]).sum::<f64>())
        .collect();
    let lmax = dec.eigenvalues.last().copied().unwrap_or(0.0);
    Ok(NtkPrediction { outputs, mode_residuals, stable: eta * lmax < 2.0 })
}

/// `Y⁽ⁿ⁾ = (I − e^{−ηKα})Y` and the per-mode residuals.
pub fn predicted_outputs(k: &NtkMatrix, y: &[f64], eta: f64, alpha: f64) -> Result<NtkPrediction> {
    if !(eta >= 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("η and α must be >= 0 (got {eta}, {alpha})")));
    }
    predict_from_decomposition(&sym_eig(k.matrix())?, y, eta, alpha)
}

/// Spearman rank correlation (average ranks on ties).
pub fn rank_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return dim_err(format!("rank correlation of {} and {} values", a.len(), b.len()));
    }
    let ranks = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&x, &y| v[x].total_cmp(&v[y]));
        let mut r = vec![0.0; v.len()];
        let mut k = 0;
        while k < idx.len() {
            let mut e = k;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
                e += 1;
            }
            let avg = 0.5 * (k + e) as f64;
            for &p in &idx[k..=e] {
                r[p] = avg;
            }
            k = e + 1;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}
