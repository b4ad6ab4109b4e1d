//! Reverse-mode derivatives of the coordinate network: vector-Jacobian
//! products, the full parameter Jacobian of the outputs, loss gradients, and
//! a central-difference oracle.
//!
//! Output scalars are flattened sample-major: output `(t, i)` (sample `t`,
//! channel `i`) has index `t * C + i`. Parameters follow [`ParamLayout`]
//! order. `ReLU'(0)` is taken as 0.
//!
//! [`ParamLayout`]: crate::net::ParamLayout

use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{gemm_nt, gemm_tn, DenseMatrix};
use crate::net::{forward, ForwardTrace, NetworkConfig, NetworkParams};
use crate::norm::{standardize_backward, NormKind};
use crate::tasks::ForwardOperator;

/// Flat index of output `(sample, channel)`.
#[inline]
pub fn output_index(sample: usize, channel: usize, channels: usize) -> usize {
    sample * channels + channel
}

/// `∂L/∂θ` given `∂L/∂H^L` (a `C × T` cotangent on the network output).
pub fn backward(
    params: &NetworkParams,
    config: &NetworkConfig,
    trace: &ForwardTrace,
    grad_output: &DenseMatrix,
) -> Result<Vec<f64>> {
    let t = trace.samples();
    if grad_output.shape() != trace.output().shape() {
        return dim_err(format!(
            "cotangent {:?} for output {:?}",
            grad_output.shape(),
            trace.output().shape()
        ));
    }
    let mut grad = vec![0.0; params.len()];
    let mut g = grad_output.clone();
    for l in (0..config.layer_count()).rev() {
        let slots = params.layout().layers[l];
        let lt = &trace.layers[l];
        if config.is_activated(l) {
            for (gv, &a) in g.as_mut_slice().iter_mut().zip(lt.pre_activation.as_slice()) {
                if a <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let dz = match &lt.norm {
            Some(st) => {
                let gamma = params.gamma(l).expect("gamma");
                let (gr, br) = (slots.gamma_range().unwrap(), slots.beta_range().unwrap());
                let mut gx = g.clone();
                for i in 0..slots.fan_out {
                    let (mut dg, mut db) = (0.0, 0.0);
                    for (gv, xv) in g.row(i).iter().zip(st.xhat.row(i)) {
                        dg += gv * xv;
                        db += gv;
                    }
                    grad[gr.start + i] = dg;
                    grad[br.start + i] = db;
                    for v in gx.row_mut(i) {
                        *v *= gamma[i];
                    }
                }
                standardize_backward(&lt.pre_norm, st, &gx)
            }
            None => g,
        };
        let prev = trace.layer_input(l);
        gemm_nt(
            slots.fan_out,
            t,
            slots.fan_in,
            dz.as_slice(),
            prev.as_slice(),
            &mut grad[slots.weight_range()],
        );
        for i in 0..slots.fan_out {
            grad[slots.bias + i] = dz.row(i).iter().sum();
        }
        if l == 0 {
            break;
        }
        let mut next = DenseMatrix::zeros(slots.fan_in, t);
        gemm_tn(
            slots.fan_in,
            slots.fan_out,
            t,
            params.weight(l),
            dz.as_slice(),
            next.as_mut_slice(),
        );
        g = next;
    }
    Ok(grad)
}

/// Jacobian of the `T·C` network outputs with respect to all parameters.
///
/// Logically a `|θ| × (T·C)` matrix; stored output-major so that each
/// output's gradient is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamJacobian {
    by_output: DenseMatrix,
    channels: usize,
    samples: usize,
}

impl ParamJacobian {
    pub fn from_output_gradients(rows: Vec<Vec<f64>>, channels: usize, samples: usize) -> Result<Self> {
        if rows.len() != channels * samples {
            return dim_err(format!("{} gradients for {channels}x{samples} outputs", rows.len()));
        }
        let by_output = DenseMatrix::from_rows(&rows)?;
        Ok(Self { by_output, channels, samples })
    }

    /// Build from a `|θ| × (T·C)` matrix.
    pub fn from_matrix(m: &DenseMatrix, channels: usize, samples: usize) -> Result<Self> {
        if m.cols() != channels * samples {
            return dim_err(format!("{} columns for {channels}x{samples} outputs", m.cols()));
        }
        Ok(Self { by_output: m.transpose(), channels, samples })
    }

    pub fn param_count(&self) -> usize {
        self.by_output.cols()
    }

    pub fn output_count(&self) -> usize {
        self.by_output.rows()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// `∂f_{i,t}/∂θ_p` with `col = t·C + i`.
    pub fn entry(&self, p: usize, col: usize) -> f64 {
        self.by_output[(col, p)]
    }

    pub fn output_gradient(&self, col: usize) -> &[f64] {
        self.by_output.row(col)
    }

    /// Output-major storage, `(T·C) × |θ|`.
    pub fn by_output(&self) -> &DenseMatrix {
        &self.by_output
    }

    /// The `|θ| × (T·C)` matrix.
    pub fn to_matrix(&self) -> DenseMatrix {
        self.by_output.transpose()
    }

    /// Keep only the parameter rows selected by `keep`.
    pub fn restrict_params(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.param_count()).filter(|&p| keep(p)).collect();
        Self { by_output: self.by_output.select_columns(&idx), channels: self.channels, samples: self.samples }
    }

    /// Max relative error against another Jacobian, skipping the given parameter rows.
    pub fn max_relative_error(&self, other: &Self, skip_rows: &[bool]) -> f64 {
        let scale = self.by_output.max_abs().max(other.by_output.max_abs()).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for col in 0..self.output_count() {
            for p in 0..self.param_count() {
                if skip_rows.get(p).copied().unwrap_or(false) {
                    continue;
                }
                let (a, b) = (self.entry(p, col), other.entry(p, col));
                let err = (a - b).abs() / (a.abs().max(b.abs()).max(1e-3 * scale));
                worst = worst.max(err);
            }
        }
        worst
    }
}

fn one_hot_cotangent(channels: usize, samples: usize, sample: usize, channel: usize) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(channels, samples);
    g[(channel, sample)] = 1.0;
    g
}

/// Exact Jacobian, one reverse pass per output scalar.
pub fn param_jacobian(
    params: &NetworkParams,
    x: &DenseMatrix,
    config: &NetworkConfig,
) -> Result<ParamJacobian> {
    let trace = forward(params, x, config)?;
    jacobian_from_trace(params, config, &trace)
}

pub fn jacobian_from_trace(
    params: &NetworkParams,
    config: &NetworkConfig,
    trace: &ForwardTrace,
) -> Result<ParamJacobian> {
    let c = config.output_dim;
    let t = trace.samples();
    let coupled = config.norm_kind.couples_samples();
    let rows: Result<Vec<Vec<f64>>> = (0..t * c)
        .into_par_iter()
        .map(|col| {
            let (s, i) = (col / c, col % c);
            if coupled {
                backward(params, config, trace, &one_hot_cotangent(c, t, s, i))
            } else {
                // samples are independent: backprop through sample s alone
                let sub = trace.column(s);
                backward(params, config, &sub, &one_hot_cotangent(c, 1, 0, i))
            }
        })
        .collect();
    ParamJacobian::from_output_gradients(rows?, c, t)
}

/// Which mean is removed from the outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centering {
    /// Per channel, over samples.
    Batch,
    /// Per sample, over channels.
    Channel,
}

/// Jacobian of the mean-centered outputs `H^L - M`, by backpropagating the
/// centering map's cotangent through the network.
pub fn centered_output_jacobian(
    params: &NetworkParams,
    x: &DenseMatrix,
    config: &NetworkConfig,
    centering: Centering,
) -> Result<ParamJacobian> {
    let trace = forward(params, x, config)?;
    let c = config.output_dim;
    let t = trace.samples();
    let rows: Result<Vec<Vec<f64>>> = (0..t * c)
        .into_par_iter()
        .map(|col| {
            let (s, i) = (col / c, col % c);
            let mut g = DenseMatrix::zeros(c, t);
            match centering {
                Centering::Batch => {
                    for n in 0..t {
                        g[(i, n)] = -1.0 / t as f64;
                    }
                }
                Centering::Channel => {
                    for m in 0..c {
                        g[(m, s)] = -1.0 / c as f64;
                    }
                }
            }
            g[(i, s)] += 1.0;
            backward(params, config, &trace, &g)
        })
        .collect();
    ParamJacobian::from_output_gradients(rows?, c, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean squared error over measurement entries.
    L2,
    /// Mean binary cross-entropy of `sigmoid(output)` against 0/1 targets.
    BinaryCrossEntropy,
}

/// Loss value and `∂L/∂measurement`.
pub fn loss_and_measurement_grad(
    measured: &[f64],
    target: &[f64],
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    if measured.len() != target.len() {
        return dim_err(format!("{} measurements vs {} targets", measured.len(), target.len()));
    }
    if measured.is_empty() {
        return Err(Error::InvalidArgument("loss over zero measurements".into()));
    }
    let n = measured.len() as f64;
    let mut loss = 0.0;
    let mut g = Vec::with_capacity(measured.len());
    match kind {
        LossKind::L2 => {
            for (m, y) in measured.iter().zip(target) {
                let r = m - y;
                loss += r * r;
                g.push(2.0 * r / n);
            }
        }
        LossKind::BinaryCrossEntropy => {
            for (&z, &y) in measured.iter().zip(target) {
                // softplus(z) - y z, computed stably
                let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
                loss += softplus - y * z;
                g.push((sigmoid(z) - y) / n);
            }
        }
    }
    Ok((loss / n, g))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss through a measurement operator and its exact parameter gradient.
pub fn loss_grad(
    params: &NetworkParams,
    x: &DenseMatrix,
    config: &NetworkConfig,
    target: &[f64],
    operator: &ForwardOperator,
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let trace = forward(params, x, config)?;
    loss_grad_from_trace(params, config, &trace, target, operator, loss)
}

pub fn loss_grad_from_trace(
    params: &NetworkParams,
    config: &NetworkConfig,
    trace: &ForwardTrace,
    target: &[f64],
    operator: &ForwardOperator,
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let measured = operator.apply(trace.output())?;
    let (value, dm) = loss_and_measurement_grad(&measured, target, loss)?;
    let cot = operator.adjoint(&dm, trace.output().rows(), trace.samples())?;
    Ok((value, backward(params, config, trace, &cot)?))
}

/// Central-difference Jacobian together with the parameter rows whose
/// perturbation flips a ReLU (those rows are unreliable).
#[derive(Debug, Clone)]
pub struct FiniteDiffJacobian {
    pub jacobian: ParamJacobian,
    pub kinked: Vec<bool>,
}

pub fn finite_diff_jacobian(
    params: &NetworkParams,
    x: &DenseMatrix,
    config: &NetworkConfig,
    step: f64,
) -> Result<FiniteDiffJacobian> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
    }
    let n = params.len();
    let c = config.output_dim;
    let results: Result<Vec<(Vec<f64>, bool)>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut plus = params.clone();
            plus.as_mut_slice()[p] += step;
            let mut minus = params.clone();
            minus.as_mut_slice()[p] -= step;
            let tp = forward(&plus, x, config)?;
            let tm = forward(&minus, x, config)?;
            let kinked = (0..config.hidden_layers).any(|l| {
                tp.layers[l]
                    .pre_activation
                    .as_slice()
                    .iter()
                    .zip(tm.layers[l].pre_activation.as_slice())
                    .any(|(a, b)| (*a > 0.0) != (*b > 0.0))
            });
            let (op, om) = (tp.output(), tm.output());
            let t = op.cols();
            let mut col = vec![0.0; t * c];
            for s in 0..t {
                for i in 0..c {
                    col[output_index(s, i, c)] = (op[(i, s)] - om[(i, s)]) / (2.0 * step);
                }
            }
            Ok((col, kinked))
        })
        .collect();
    let results = results?;
    let t = x.cols();
    let mut m = DenseMatrix::zeros(n, t * c);
    let mut kinked = Vec::with_capacity(n);
    for (p, (col, k)) in results.into_iter().enumerate() {
        m.row_mut(p).copy_from_slice(&col);
        kinked.push(k);
    }
    Ok(FiniteDiffJacobian { jacobian: ParamJacobian::from_matrix(&m, c, t)?, kinked })
}

/// Whether a normalization couples Jacobian columns across samples.
pub fn couples_samples(kind: NormKind) -> bool {
    kind.couples_samples()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, NormPlacement};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coords(dims: usize, t: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(dims, t, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_layer_jacobian_is_input() {
        // one hidden layer whose ReLU is always active: make the output
        // layer read a constant so only the output weights matter
        let cfg = NetworkConfig::new(3, 1, 2, 1).with_seed(1);
        let p = init_params(&cfg).unwrap();
        let x = coords(3, 4, 2);
        let trace = forward(&p, &x, &cfg).unwrap();
        let j = param_jacobian(&p, &x, &cfg).unwrap();
        let out_w = p.layout().layers[1].weight;
        for s in 0..4 {
            for k in 0..2 {
                assert_eq!(j.entry(out_w + k, s), trace.layers[0].output[(k, s)]);
            }
            assert_eq!(j.entry(p.layout().layers[1].bias, s), 1.0);
        }
    }

    #[test]
    fn matches_finite_differences_on_smooth_configs() {
        for kind in NormKind::ALL {
            let cfg = NetworkConfig::new(2, 1, 8, 1).with_norm(kind).with_seed(7);
            let p = init_params(&cfg).unwrap();
            let x = coords(2, 16, 3);
            let j = param_jacobian(&p, &x, &cfg).unwrap();
            let fd = finite_diff_jacobian(&p, &x, &cfg, 1e-5).unwrap();
            let err = j.max_relative_error(&fd.jacobian, &fd.kinked);
            assert!(err < 1e-5, "{kind}: max relative error {err}");
        }
    }

    #[test]
    fn finite_difference_order_two() {
        let cfg = NetworkConfig::new(2, 1, 6, 1).with_norm(NormKind::Cross).with_seed(5);
        let p = init_params(&cfg).unwrap();
        let x = coords(2, 8, 4);
        let j = param_jacobian(&p, &x, &cfg).unwrap().to_matrix();
        let err = |h: f64| {
            let fd = finite_diff_jacobian(&p, &x, &cfg, h).unwrap();
            let mut worst = 0.0f64;
            for (r, kinked) in fd.kinked.iter().enumerate() {
                if !kinked {
                    let fm = fd.jacobian.to_matrix();
                    for c in 0..j.cols() {
                        worst = worst.max((fm[(r, c)] - j[(r, c)]).abs());
                    }
                }
            }
            worst
        };
        let (e1, e2) = (err(4e-3), err(2e-3));
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.0, "error ratio {ratio} ({e1} / {e2})");
    }

    #[test]
    fn kinks_are_flagged() {
        let cfg = NetworkConfig::new(1, 1, 1, 1).with_seed(0);
        let mut p = init_params(&cfg).unwrap();
        // pre-activation exactly 0 at x = 0.5 for w=1, b=-0.5
        p.as_mut_slice()[0] = 1.0;
        p.bias_mut(0)[0] = -0.5;
        let x = DenseMatrix::new(1, 1, vec![0.5]).unwrap();
        let fd = finite_diff_jacobian(&p, &x, &cfg, 1e-5).unwrap();
        assert!(fd.kinked[0] && fd.kinked[1]);
        assert!(!fd.kinked[2]);
        // ReLU'(0) = 0 in the reverse pass
        let j = param_jacobian(&p, &x, &cfg).unwrap();
        assert_eq!(j.entry(0, 0), 0.0);
    }

    #[test]
    fn batch_norm_output_columns_sum_to_zero() {
        let cfg = NetworkConfig::new(2, 2, 8, 2)
            .with_norm(NormKind::Batch)
            .with_placement(NormPlacement::LastLayerOnly)
            .with_seed(3);
        let p = init_params(&cfg).unwrap();
        let x = coords(2, 10, 1);
        let j = param_jacobian(&p, &x, &cfg).unwrap();
        for i in 0..2 {
            for q in 0..j.param_count() {
                if p.layout().is_norm_affine(q) {
                    continue;
                }
                let s: f64 = (0..10).map(|t| j.entry(q, output_index(t, i, 2))).sum();
                assert!(s.abs() < 1e-10, "param {q} channel {i}: {s}");
            }
        }
    }

    #[test]
    fn loss_gradient_consistency() {
        let cfg = NetworkConfig::new(2, 2, 6, 2).with_norm(NormKind::Global).with_seed(8);
        let p = init_params(&cfg).unwrap();
        let x = coords(2, 5, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op = ForwardOperator::Identity;
        let (_, g) = loss_grad(&p, &x, &cfg, &target, &op, LossKind::L2).unwrap();

        // J · (2/(T·C)) · residual, with the residual in channel-major order
        let out = crate::net::predict(&p, &x, &cfg).unwrap();
        let j = param_jacobian(&p, &x, &cfg).unwrap();
        for q in 0..j.param_count() {
            let mut acc = 0.0;
            for s in 0..5 {
                for i in 0..2 {
                    let r = out[(i, s)] - target[i * 5 + s];
                    acc += j.entry(q, output_index(s, i, 2)) * 2.0 * r / 10.0;
                }
            }
            assert!((acc - g[q]).abs() <= 1e-10 * (1.0 + acc.abs()), "param {q}: {acc} vs {}", g[q]);
        }
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let cfg = NetworkConfig::new(1, 1, 4, 1).with_seed(2);
        let p = init_params(&cfg).unwrap();
        let x = coords(1, 6, 1);
        let target = crate::net::predict(&p, &x, &cfg).unwrap().into_vec();
        let (loss, g) = loss_grad(&p, &x, &cfg, &target, &ForwardOperator::Identity, LossKind::L2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for loss in [LossKind::L2, LossKind::BinaryCrossEntropy] {
            let cfg = NetworkConfig::new(2, 2, 5, 1).with_norm(NormKind::Cross).with_seed(4);
            let p = init_params(&cfg).unwrap();
            let x = coords(2, 7, 2);
            let target: Vec<f64> = (0..7).map(|i| (i % 2) as f64).collect();
            let op = ForwardOperator::Identity;
            let (_, g) = loss_grad(&p, &x, &cfg, &target, &op, loss).unwrap();
            let h = 1e-6;
            for q in 0..p.len() {
                let mut a = p.clone();
                a.as_mut_slice()[q] += h;
                let mut b = p.clone();
                b.as_mut_slice()[q] -= h;
                let la = loss_grad(&a, &x, &cfg, &target, &op, loss).unwrap().0;
                let lb = loss_grad(&b, &x, &cfg, &target, &op, loss).unwrap().0;
                let fd = (la - lb) / (2.0 * h);
                assert!((fd - g[q]).abs() <= 1e-5 * (fd.abs().max(g[q].abs()).max(1e-4)), "{loss:?} param {q}: {fd} vs {}", g[q]);
            }
        }
    }

    #[test]
    fn plain_last_layer_jacobian_is_hidden_output() {
        let cfg = NetworkConfig::new(1, 3, 5, 1).with_seed(12);
        let p = init_params(&cfg).unwrap();
        let x = coords(1, 6, 3);
        let trace = forward(&p, &x, &cfg).unwrap();
        let j = param_jacobian(&p, &x, &cfg).unwrap();
        let w = p.layout().layers[3].weight;
        for s in 0..6 {
            for k in 0..5 {
                assert_eq!(j.entry(w + k, s), trace.layers[2].output[(k, s)]);
            }
        }
    }

    #[test]
    fn jacobian_is_deterministic() {
        let cfg = NetworkConfig::new(2, 2, 8, 1).with_norm(NormKind::Batch).with_seed(3);
        let p = init_params(&cfg).unwrap();
        let x = coords(2, 9, 3);
        assert_eq!(param_jacobian(&p, &x, &cfg).unwrap(), param_jacobian(&p, &x, &cfg).unwrap());
    }
}
