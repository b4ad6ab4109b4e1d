//! Desk-scale fitting tasks and their measurement operators.
//!
//! A [`TaskSpec`] bundles the coordinates fed to the network, the
//! measurements the loss compares against, the operator mapping network
//! output to measurement space, and the ground-truth signal used for
//! metrics. Coordinates always lie in `[-1, 1]` per dimension.
//!
//! Network output of shape `C × T` is flattened channel-major
//! (`i * T + t`) wherever an operator needs a vector.

pub mod fourier;
pub mod image;
pub mod occupancy;
pub mod radon;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::grad::LossKind;
use crate::linalg::DenseMatrix;

pub use fourier::{fourier_measure, FourierMask, FourierOperator};
pub use image::{bpp, make_image_task, read_ppm, write_ppm, Image};
pub use occupancy::{make_occupancy_task, OccupancyGrid};
pub use radon::{radon_project, shepp_logan, RadonOperator};

/// Measurement model applied to the network output.
#[derive(Debug, Clone)]
pub enum ForwardOperator {
    Identity,
    Radon(RadonOperator),
    Fourier(FourierOperator),
}

impl ForwardOperator {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Radon(_) => "radon",
            Self::Fourier(_) => "fourier_mask",
        }
    }

    /// Number of measurements produced from a `channels × samples` output.
    pub fn measurement_len(&self, channels: usize, samples: usize) -> usize {
        match self {
            Self::Identity => channels * samples,
            Self::Radon(op) => op.measurement_len(),
            Self::Fourier(op) => op.measurement_len(),
        }
    }

    fn check_single_image(&self, channels: usize, samples: usize, pixels: usize) -> Result<()> {
        if channels != 1 || samples != pixels {
            return dim_err(format!(
                "{} operator expects a 1 x {pixels} output, got {channels} x {samples}",
                self.label()
            ));
        }
        Ok(())
    }

    pub fn apply(&self, output: &DenseMatrix) -> Result<Vec<f64>> {
        let (c, t) = output.shape();
        match self {
            Self::Identity => Ok(output.as_slice().to_vec()),
            Self::Radon(op) => {
                self.check_single_image(c, t, op.side() * op.side())?;
                op.project(output.as_slice())
            }
            Self::Fourier(op) => {
                self.check_single_image(c, t, op.pixel_count())?;
                op.apply(output.as_slice())
            }
        }
    }

    /// Adjoint map from measurement space back to a `channels × samples` output.
    pub fn adjoint(&self, measurement: &[f64], channels: usize, samples: usize) -> Result<DenseMatrix> {
        let expected = self.measurement_len(channels, samples);
        if measurement.len() != expected {
            return dim_err(format!("{} measurements, operator expects {expected}", measurement.len()));
        }
        match self {
            Self::Identity => DenseMatrix::new(channels, samples, measurement.to_vec()),
            Self::Radon(op) => {
                self.check_single_image(channels, samples, op.side() * op.side())?;
                DenseMatrix::new(1, samples, op.adjoint(measurement)?)
            }
            Self::Fourier(op) => {
                self.check_single_image(channels, samples, op.pixel_count())?;
                DenseMatrix::new(1, samples, op.adjoint(measurement)?)
            }
        }
    }
}

/// Geometry of the reference signal, used for metrics and band errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Signal1d { len: usize },
    Image { height: usize, width: usize, channels: usize },
    Ct { side: usize },
    Mri { height: usize, width: usize },
    Occupancy { side: usize },
}

impl TaskKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Signal1d { .. } => "signal1d",
            Self::Image { .. } => "image",
            Self::Ct { .. } => "ct",
            Self::Mri { .. } => "mri",
            Self::Occupancy { .. } => "occupancy",
        }
    }

    /// Spatial shape `(height, width)` for 2D signals, `(1, len)` for 1D, `None` for volumes.
    pub fn plane_shape(&self) -> Option<(usize, usize)> {
        match *self {
            Self::Signal1d { len } => Some((1, len)),
            Self::Image { height, width, .. } => Some((height, width)),
            Self::Ct { side } => Some((side, side)),
            Self::Mri { height, width } => Some((height, width)),
            Self::Occupancy { .. } => None,
        }
    }
}

/// How raw network output maps to the evaluated signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputTransform {
    Identity,
    Sigmoid,
}

/// Per-iteration random subset of the coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSchedule {
    pub count: usize,
    pub seed: u64,
}

impl BatchSchedule {
    /// Sorted sample indices for a given iteration, a pure function of `(seed, iteration)`.
    pub fn indices(&self, population: usize, iteration: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(iteration as u64);
        let mut idx = sample(&mut rng, population, self.count.min(population)).into_vec();
        idx.sort_unstable();
        idx
    }
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// `N⁰ × T` coordinates in `[-1, 1]`.
    pub coords: DenseMatrix,
    /// Ground-truth signal, `C × T`, in the evaluated (post-transform) domain.
    pub reference: DenseMatrix,
    pub measurements: Vec<f64>,
    pub operator: ForwardOperator,
    pub loss: LossKind,
    pub transform: OutputTransform,
    /// Peak value for PSNR.
    pub peak: f64,
    pub batch: Option<BatchSchedule>,
}

impl TaskSpec {
    pub fn input_dim(&self) -> usize {
        self.coords.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.reference.rows()
    }

    pub fn samples(&self) -> usize {
        self.coords.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.reference.cols() != self.samples() {
            return dim_err(format!(
                "reference has {} samples, coordinates {}",
                self.reference.cols(),
                self.samples()
            ));
        }
        let expected = self.operator.measurement_len(self.output_dim(), self.samples());
        if self.measurements.len() != expected {
            return dim_err(format!("{} measurements, operator expects {expected}", self.measurements.len()));
        }
        if self.coords.as_slice().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("coordinates outside [-1, 1]".into()));
        }
        if !self.reference.is_finite() || self.measurements.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite targets".into()));
        }
        Ok(())
    }

    /// Coordinates and targets used for the gradient step at `iteration`.
    ///
    /// Without a batch schedule this is the full task. Subsampling is only
    /// defined for the identity operator.
    pub fn batch_at(&self, iteration: usize) -> (DenseMatrix, Vec<f64>) {
        match (self.batch, &self.operator) {
            (Some(schedule), ForwardOperator::Identity) => {
                let idx = schedule.indices(self.samples(), iteration);
                let coords = self.coords.select_columns(&idx);
                let t = self.samples();
                let mut targets = Vec::with_capacity(idx.len() * self.output_dim());
                for i in 0..self.output_dim() {
                    targets.extend(idx.iter().map(|&s| self.measurements[i * t + s]));
                }
                (coords, targets)
            }
            _ => (self.coords.clone(), self.measurements.clone()),
        }
    }

    /// Map raw network output to the evaluated signal domain.
    pub fn evaluate_output(&self, output: &DenseMatrix) -> DenseMatrix {
        match self.transform {
            OutputTransform::Identity => output.clone(),
            OutputTransform::Sigmoid => output.map(crate::grad::sigmoid),
        }
    }
}

/// Uniform periodic grid `x_t = -1 + 2t/T`.
pub fn grid_1d(len: usize) -> Vec<f64> {
    (0..len).map(|t| -1.0 + 2.0 * t as f64 / len as f64).collect()
}

/// Pixel-center coordinate `(2k + 1)/n - 1`.
pub fn pixel_center(k: usize, n: usize) -> f64 {
    (2 * k + 1) as f64 / n as f64 - 1.0
}

/// `2 × (H·W)` pixel-center coordinates, row 0 the column (x) and row 1 the
/// row (y); sample index `t = r·W + c`.
pub fn grid_2d(height: usize, width: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(2, height * width);
    for r in 0..height {
        for c in 0..width {
            let t = r * width + c;
            m[(0, t)] = pixel_center(c, width);
            m[(1, t)] = pixel_center(r, height);
        }
    }
    m
}

/// Sum of sines `y(x) = Σ a_k sin(2π f_k (x+1)/2)` on the periodic grid.
pub fn make_1d_task(freqs: &[f64], amps: &[f64], len: usize) -> Result<TaskSpec> {
    if freqs.len() != amps.len() {
        return dim_err(format!("{} frequencies vs {} amplitudes", freqs.len(), amps.len()));
    }
    if len < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {len}")));
    }
    if let Some(&f) = freqs.iter().find(|f| !f.is_finite() || **f < 0.0) {
        return Err(Error::InvalidArgument(format!("invalid frequency {f}")));
    }
    let fmax = freqs.iter().cloned().fold(0.0, f64::max);
    if (len as f64) < 2.0 * fmax {
        return Err(Error::InvalidArgument(format!(
            "{len} samples alias frequency {fmax} (need at least {})",
            (2.0 * fmax).ceil()
        )));
    }
    let xs = grid_1d(len);
    let y: Vec<f64> = xs
        .iter()
        .map(|&x| {
            freqs
                .iter()
                .zip(amps)
                .map(|(f, a)| a * (2.0 * std::f64::consts::PI * f * (x + 1.0) / 2.0).sin())
                .sum()
        })
        .collect();
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    Ok(TaskSpec {
        kind: TaskKind::Signal1d { len },
        coords: DenseMatrix::new(1, len, xs)?,
        reference: DenseMatrix::new(1, len, y.clone())?,
        measurements: y,
        operator: ForwardOperator::Identity,
        loss: LossKind::L2,
        transform: OutputTransform::Identity,
        peak,
        batch: None,
    })
}

/// CT task: fit an image observed only through its sinogram.
pub fn make_ct_task(phantom: &DenseMatrix, op: RadonOperator) -> Result<TaskSpec> {
    let side = op.side();
    if phantom.shape() != (side, side) {
        return dim_err(format!("phantom {:?} for a side-{side} operator", phantom.shape()));
    }
    let sino = op.project(phantom.as_slice())?;
    Ok(TaskSpec {
        kind: TaskKind::Ct { side },
        coords: grid_2d(side, side),
        reference: DenseMatrix::new(1, side * side, phantom.as_slice().to_vec())?,
        measurements: sino,
        operator: ForwardOperator::Radon(op),
        loss: LossKind::L2,
        transform: OutputTransform::Identity,
        peak: 1.0,
        batch: None,
    })
}

/// MRI-style task: fit a slice observed through masked Fourier coefficients.
pub fn make_mri_task(slice: &DenseMatrix, mask: FourierMask) -> Result<TaskSpec> {
    let (h, w) = slice.shape();
    let op = FourierOperator::new(mask);
    if (op.height(), op.width()) != (h, w) {
        return dim_err(format!("slice {h}x{w} for a {}x{} mask", op.height(), op.width()));
    }
    let measurements = op.apply(slice.as_slice())?;
    Ok(TaskSpec {
        kind: TaskKind::Mri { height: h, width: w },
        coords: grid_2d(h, w),
        reference: DenseMatrix::new(1, h * w, slice.as_slice().to_vec())?,
        measurements,
        operator: ForwardOperator::Fourier(op),
        loss: LossKind::L2,
        transform: OutputTransform::Identity,
        peak: 1.0,
        batch: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spectrum_is_zero() {
        let t = make_1d_task(&[], &[], 16).unwrap();
        assert!(t.measurements.iter().all(|v| *v == 0.0));
        t.validate().unwrap();
    }

    #[test]
    fn single_tone_values() {
        let t = make_1d_task(&[1.0], &[1.0], 8).unwrap();
        for (k, v) in t.measurements.iter().enumerate() {
            let expect = (2.0 * std::f64::consts::PI * k as f64 / 8.0).sin();
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_only_at_requested_bins() {
        let t = make_1d_task(&[2.0, 5.0], &[1.0, 0.5], 32).unwrap();
        let spec = fourier::dft_1d(&t.measurements);
        for (k, c) in spec.iter().enumerate() {
            let f = k.min(32 - k);
            if f == 2 || f == 5 {
                assert!(c.norm() > 0.1);
            } else {
                assert!(c.norm() < 1e-10, "bin {k}: {}", c.norm());
            }
        }
    }

    #[test]
    fn aliasing_rejected() {
        assert!(make_1d_task(&[5.0], &[1.0], 9).is_err());
        assert!(make_1d_task(&[4.0], &[1.0], 8).is_ok());
        assert!(make_1d_task(&[1.0], &[], 8).is_err());
    }

    #[test]
    fn grid_conventions() {
        let g = grid_2d(1, 1);
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
        let g = grid_2d(2, 3);
        assert_eq!(g[(0, 4)], pixel_center(1, 3));
        assert_eq!(g[(1, 4)], pixel_center(1, 2));
        assert!(grid_1d(7).iter().all(|x| (-1.0..1.0).contains(x)));
    }

    #[test]
    fn batch_schedule_deterministic() {
        let b = BatchSchedule { count: 10, seed: 3 };
        assert_eq!(b.indices(100, 4), b.indices(100, 4));
        assert_ne!(b.indices(100, 4), b.indices(100, 5));
        assert_eq!(b.indices(5, 0), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn identity_operator_adjoint() {
        let op = ForwardOperator::Identity;
        let m = DenseMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        let v = op.apply(&m).unwrap();
        assert_eq!(op.adjoint(&v, 2, 3).unwrap(), m);
        assert!(op.adjoint(&v, 3, 3).is_err());
    }
}
