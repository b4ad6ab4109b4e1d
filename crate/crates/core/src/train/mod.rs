//! Full-batch training, optimizers and the per-iteration trace.

pub mod bands;
pub mod metrics;

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{DivergedRun, Error, Result};
use crate::grad::loss_grad;
use crate::net::{forward, init_params, NetworkConfig, NetworkParams};
use crate::norm::NormKind;
use crate::tasks::{TaskKind, TaskSpec};

pub use bands::frequency_band_errors;
pub use metrics::{iou, mse, psnr, ssim};

/// Initial learning rate for normalized networks.
pub const NORMALIZED_LR: f64 = 1e-2;
/// Initial learning rate for networks without normalization.
pub const PLAIN_LR: f64 = 2e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// Plain full-batch gradient descent.
    GradientDescent,
}

impl Optimizer {
    pub fn adam() -> Self {
        Self::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Adam { .. } => "adam",
            Self::GradientDescent => "gd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Cosine decay from `learning_rate` to this floor; equal or larger means constant.
    pub lr_floor: f64,
    pub optimizer: Optimizer,
    pub record_every: usize,
    /// Frequency bands tracked per record; 0 disables band tracking.
    pub bands: usize,
    pub track_ssim: bool,
}

impl TrainConfig {
    /// Adam with the learning-rate default for the given normalization.
    pub fn for_norm(kind: NormKind, iterations: usize) -> Self {
        let lr = if kind == NormKind::None { PLAIN_LR } else { NORMALIZED_LR };
        Self {
            iterations,
            learning_rate: lr,
            lr_floor: lr,
            optimizer: Optimizer::adam(),
            record_every: 100,
            bands: 0,
            track_ssim: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.lr_floor >= 0.0) {
            return Err(Error::Config(format!("learning-rate floor must be >= 0, got {}", self.lr_floor)));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be >= 1".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::Config(format!("invalid Adam constants ({beta1}, {beta2}, {eps})")));
            }
        }
        Ok(())
    }

    /// Learning rate for the step taken at zero-based iteration `k`.
    pub fn learning_rate_at(&self, k: usize) -> f64 {
        if self.lr_floor >= self.learning_rate || self.iterations <= 1 {
            return self.learning_rate;
        }
        let progress = k as f64 / (self.iterations - 1) as f64;
        self.lr_floor
            + 0.5 * (self.learning_rate - self.lr_floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for k in 0..params.len() {
        let g = grad[k];
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g;
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g;
        let mhat = state.m[k] / c1;
        let vhat = state.v[k] / c2;
        params[k] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Number of completed steps.
    pub iteration: usize,
    pub loss: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub bands: Vec<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub bands: usize,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn at_iteration(&self, iteration: usize) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.iteration == iteration)
    }

    /// Comma-separated text: `iteration,loss,psnr,ssim,band_0..`.
    ///
    /// Wall-clock time is left out so identical runs give identical bytes;
    /// a missing SSIM is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,psnr,ssim");
        for b in 0..self.bands {
            let _ = write!(out, ",band_{b}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{:.12e},{:.12e},", r.iteration, r.loss, r.psnr);
            if let Some(s) = r.ssim {
                let _ = write!(out, "{s:.12e}");
            }
            for v in &r.bands {
                let _ = write!(out, ",{v:.12e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Metrics of the full-task prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub iou: Option<f64>,
    pub bands: Vec<f64>,
}

/// Evaluate on every task coordinate.
pub fn evaluate(
    params: &NetworkParams,
    task: &TaskSpec,
    net: &NetworkConfig,
    bands: usize,
    with_ssim: bool,
) -> Result<Evaluation> {
    let trace = forward(params, &task.coords, net)?;
    let raw = trace.output();
    let measured = task.operator.apply(raw)?;
    let (loss, _) = crate::grad::loss_and_measurement_grad(&measured, &task.measurements, task.loss)?;
    let pred = task.evaluate_output(raw);
    let psnr = metrics::psnr(pred.as_slice(), task.reference.as_slice(), task.peak)?;
    let plane = task.kind.plane_shape();
    let ssim = match (with_ssim, plane, task.kind) {
        (true, Some((h, w)), TaskKind::Image { .. } | TaskKind::Ct { .. } | TaskKind::Mri { .. }) => {
            Some(metrics::ssim(pred.as_slice(), task.reference.as_slice(), h, w, task.peak)?)
        }
        _ => None,
    };
    let iou = match task.kind {
        TaskKind::Occupancy { .. } => Some(metrics::iou(pred.as_slice(), task.reference.as_slice(), 0.5)?),
        _ => None,
    };
    let bands = match (bands, plane) {
        (0, _) | (_, None) => Vec::new(),
        (b, Some(p)) => frequency_band_errors(&pred, &task.reference, p, b)?,
    };
    Ok(Evaluation { loss, psnr, ssim, iou, bands })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub trace: TrainTrace,
}

/// Train from `params` on `task`. Deterministic for fixed inputs.
///
/// A non-finite loss or gradient aborts with [`Error::Divergence`] holding
/// the last finite iterate and the trace so far.
pub fn train(
    params: NetworkParams,
    task: &TaskSpec,
    config: &TrainConfig,
    net: &NetworkConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    net.validate()?;
    task.validate()?;
    params.check_config(net)?;
    if task.input_dim() != net.input_dim || task.output_dim() != net.output_dim {
        return Err(Error::Dimension(format!(
            "task is {}→{}, network {}→{}",
            task.input_dim(),
            task.output_dim(),
            net.input_dim,
            net.output_dim
        )));
    }
    let start = Instant::now();
    let mut params = params;
    let mut trace = TrainTrace { records: Vec::new(), bands: if task.kind.plane_shape().is_some() { config.bands } else { 0 } };
    let mut adam = AdamState::new(params.len());
    for k in 0..config.iterations {
        let (coords, targets) = task.batch_at(k);
        let (loss, grad) = loss_grad(&params, &coords, net, &targets, &task.operator, task.loss)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(Box::new(DivergedRun { iteration: k, params, trace })));
        }
        let lr = config.learning_rate_at(k);
        let mut next = params.clone();
        match config.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                adam_step(next.as_mut_slice(), &grad, &mut adam, lr, beta1, beta2, eps)?
            }
            Optimizer::GradientDescent => {
                for (p, g) in next.as_mut_slice().iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
        }
        if next.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(Box::new(DivergedRun { iteration: k, params, trace })));
        }
        params = next;
        let done = k + 1;
        if done % config.record_every == 0 || done == config.iterations {
            let eval = evaluate(&params, task, net, trace.bands, config.track_ssim)?;
            if !eval.loss.is_finite() {
                return Err(Error::Divergence(Box::new(DivergedRun { iteration: done, params, trace })));
            }
            trace.records.push(TraceRecord {
                iteration: done,
                loss: eval.loss,
                psnr: eval.psnr,
                ssim: eval.ssim,
                bands: eval.bands,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(TrainOutcome { params, trace })
}

/// Initialize from `net.seed` and train.
pub fn train_from_seed(task: &TaskSpec, config: &TrainConfig, net: &NetworkConfig) -> Result<TrainOutcome> {
    train(init_params(net)?, task, config, net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::make_1d_task;

    #[test]
    fn first_adam_step_is_lr() {
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = [1.5, -2.0];
        let mut s = AdamState::new(2);
        for _ in 0..50 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, 0.9, 0.999, 1e-8).unwrap();
        }
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = [1.0, -0.5, 0.8];
        let mut s = AdamState::new(3);
        let loss = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>();
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            adam_step(&mut p, &g, &mut s, 1e-2, 0.9, 0.999, 1e-8).unwrap();
        }
        assert!(loss(&p) < 1e-6, "{}", loss(&p));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let mut c = TrainConfig::for_norm(NormKind::Batch, 11);
        c.lr_floor = 1e-4;
        assert_eq!(c.learning_rate_at(0), 1e-2);
        assert!((c.learning_rate_at(10) - 1e-4).abs() < 1e-15);
        assert!(c.learning_rate_at(5) < 1e-2 && c.learning_rate_at(5) > 1e-4);
        assert_eq!(TrainConfig::for_norm(NormKind::None, 5).learning_rate_at(3), PLAIN_LR);
    }

    #[test]
    fn constant_target_linear_net() {
        let task = {
            let mut t = make_1d_task(&[], &[], 16).unwrap();
            t.measurements = vec![0.7; 16];
            t.reference = crate::linalg::DenseMatrix::new(1, 16, vec![0.7; 16]).unwrap();
            t
        };
        // one always-active hidden unit makes the network affine in its parameters' span
        let net = NetworkConfig::new(1, 1, 1, 1);
        let params = NetworkParams::from_flat(&net, vec![0.0, 1.0, 0.3, 0.0]).unwrap();
        let mut cfg = TrainConfig::for_norm(NormKind::None, 200);
        cfg.optimizer = Optimizer::GradientDescent;
        cfg.learning_rate = 0.3;
        let out = train(params, &task, &cfg, &net).unwrap();
        let last = out.trace.last().unwrap();
        assert_eq!(last.iteration, 200);
        assert!(last.loss < 1e-10, "{}", last.loss);
    }

    #[test]
    fn record_cadence_and_csv() {
        let task = make_1d_task(&[1.0], &[1.0], 16).unwrap();
        let net = NetworkConfig::new(1, 2, 8, 1).with_seed(1);
        let mut cfg = TrainConfig::for_norm(NormKind::None, 1);
        cfg.bands = 4;
        let out = train_from_seed(&task, &cfg, &net).unwrap();
        let csv = out.trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "iteration,loss,psnr,ssim,band_0,band_1,band_2,band_3");
        assert_eq!(lines[1].split(',').count(), 8);

        cfg.iterations = 25;
        cfg.record_every = 10;
        let out = train_from_seed(&task, &cfg, &net).unwrap();
        let its: Vec<usize> = out.trace.records.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![10, 20, 25]);
    }

    #[test]
    fn deterministic_runs() {
        let task = make_1d_task(&[1.0, 3.0], &[1.0, 0.5], 32).unwrap();
        let net = NetworkConfig::new(1, 2, 8, 1).with_norm(NormKind::Batch).with_seed(2);
        let mut cfg = TrainConfig::for_norm(NormKind::Batch, 30);
        cfg.record_every = 5;
        cfg.bands = 4;
        let a = train_from_seed(&task, &cfg, &net).unwrap();
        let b = train_from_seed(&task, &cfg, &net).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn divergence_keeps_last_finite_iterate() {
        let task = make_1d_task(&[1.0], &[1.0], 16).unwrap();
        let net = NetworkConfig::new(1, 2, 8, 1).with_seed(4);
        let mut cfg = TrainConfig::for_norm(NormKind::None, 100);
        cfg.optimizer = Optimizer::GradientDescent;
        cfg.learning_rate = 1e6;
        cfg.record_every = 1;
        match train_from_seed(&task, &cfg, &net) {
            Err(Error::Divergence(run)) => {
                assert!(run.params.as_slice().iter().all(|v| v.is_finite()));
                assert!(run.iteration < 100);
                assert!(run.trace.records.len() <= run.iteration);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = TrainConfig::for_norm(NormKind::None, 10);
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::for_norm(NormKind::None, 10);
        cfg.optimizer = Optimizer::Adam { beta1: 1.0, beta2: 0.9, eps: 1e-8 };
        assert!(cfg.validate().is_err());
    }
}
