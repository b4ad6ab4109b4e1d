//! Parallel-beam Radon projection by bilinear ray marching.
//!
//! Pixel `(r, c)` sits at `(c, r)` in pixel units and the rotation center is
//! the image center. The ray for angle `θ` and detector offset `u` is
//! `center + u·(−sin θ, cos θ) + s·(cos θ, sin θ)`, sampled every `step`
//! pixels with zero padding outside the image. Each sinogram entry is
//! `step · Σ samples`. The operator is precomputed as a sparse matrix so the
//! adjoint is its exact transpose.

use std::f64::consts::PI;

use crate::error::{dim_err, Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone)]
pub struct RadonOperator {
    side: usize,
    angles: Vec<f64>,
    detectors: usize,
    step: f64,
    row_start: Vec<usize>,
    col_idx: Vec<u32>,
    weights: Vec<f64>,
}

impl RadonOperator {
    pub fn new(side: usize, angles: Vec<f64>, detectors: usize, step: f64) -> Result<Self> {
        if side == 0 || detectors == 0 || angles.is_empty() {
            return Err(Error::InvalidArgument("radon operator needs side, detectors and angles > 0".into()));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!("ray step must be > 0, got {step}")));
        }
        if let Some(a) = angles.iter().find(|a| !(0.0..PI).contains(*a)) {
            return Err(Error::InvalidArgument(format!("angle {a} outside [0, π)")));
        }
        let mut op = Self {
            side,
            angles,
            detectors,
            step,
            row_start: vec![0],
            col_idx: Vec::new(),
            weights: Vec::new(),
        };
        op.build();
        Ok(op)
    }

    /// `count` angles evenly spaced over `[0, π)`.
    pub fn uniform(side: usize, count: usize, detectors: usize) -> Result<Self> {
        let angles = (0..count).map(|k| k as f64 * PI / count as f64).collect();
        Self::new(side, angles, detectors, 0.5)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn detectors(&self) -> usize {
        self.detectors
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn measurement_len(&self) -> usize {
        self.angles.len() * self.detectors
    }

    /// Detector offset from the rotation axis, in pixels.
    pub fn detector_offset(&self, d: usize) -> f64 {
        (d as f64 - (self.detectors as f64 - 1.0) / 2.0) * (self.side as f64 / self.detectors as f64)
    }

    fn build(&mut self) {
        let n = self.side as f64;
        let center = (n - 1.0) / 2.0;
        // half chord long enough to cross the padded image at any angle
        let half = (n / 2.0 + 1.0) * std::f64::consts::SQRT_2;
        let k_half = (half / self.step).ceil() as i64;
        let mut acc: Vec<(u32, f64)> = Vec::new();
        for a in 0..self.angles.len() {
            let (sin, cos) = self.angles[a].sin_cos();
            for d in 0..self.detectors {
                let u = self.detector_offset(d);
                acc.clear();
                for k in -k_half..=k_half {
                    let s = k as f64 * self.step;
                    let px = center - u * sin + s * cos;
                    let py = center + u * cos + s * sin;
                    bilinear_taps(px, py, self.side, |idx, w| acc.push((idx as u32, w * self.step)));
                }
                acc.sort_by_key(|e| e.0);
                let mut last: Option<u32> = None;
                for &(idx, w) in acc.iter() {
                    if last == Some(idx) {
                        *self.weights.last_mut().unwrap() += w;
                    } else {
                        self.col_idx.push(idx);
                        self.weights.push(w);
                        last = Some(idx);
                    }
                }
                self.row_start.push(self.col_idx.len());
            }
        }
    }

    /// Sinogram, row-major `angles × detectors`, of a row-major image.
    pub fn project(&self, image: &[f64]) -> Result<Vec<f64>> {
        if image.len() != self.side * self.side {
            return dim_err(format!("image of {} pixels for side {}", image.len(), self.side));
        }
        Ok((0..self.measurement_len())
            .map(|r| {
                let span = self.row_start[r]..self.row_start[r + 1];
                self.col_idx[span.clone()]
                    .iter()
                    .zip(&self.weights[span])
                    .map(|(&c, &w)| w * image[c as usize])
                    .sum()
            })
            .collect())
    }

    /// Transpose of [`project`](Self::project).
    pub fn adjoint(&self, sinogram: &[f64]) -> Result<Vec<f64>> {
        if sinogram.len() != self.measurement_len() {
            return dim_err(format!("sinogram of {} entries, expected {}", sinogram.len(), self.measurement_len()));
        }
        let mut out = vec![0.0; self.side * self.side];
        for (r, &y) in sinogram.iter().enumerate() {
            let span = self.row_start[r]..self.row_start[r + 1];
            for (&c, &w) in self.col_idx[span.clone()].iter().zip(&self.weights[span]) {
                out[c as usize] += w * y;
            }
        }
        Ok(out)
    }
}

fn bilinear_taps(px: f64, py: f64, side: usize, mut emit: impl FnMut(usize, f64)) {
    let (c0, r0) = (px.floor(), py.floor());
    let (fx, fy) = (px - c0, py - r0);
    for (dr, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (dc, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let (r, c) = (r0 as i64 + dr, c0 as i64 + dc);
            let w = wx * wy;
            if w > 0.0 && r >= 0 && c >= 0 && (r as usize) < side && (c as usize) < side {
                emit(r as usize * side + c as usize, w);
            }
        }
    }
}

/// Sinogram of a `side × side` image as an `angles × detectors` matrix.
pub fn radon_project(image: &DenseMatrix, op: &RadonOperator) -> Result<DenseMatrix> {
    if image.shape() != (op.side(), op.side()) {
        return dim_err(format!("image {:?} for side {}", image.shape(), op.side()));
    }
    DenseMatrix::new(op.angles().len(), op.detectors(), op.project(image.as_slice())?)
}

/// Modified Shepp–Logan head phantom, clipped to `[0, 1]`.
pub fn shepp_logan(side: usize) -> DenseMatrix {
    // (intensity, semi-axis a, semi-axis b, center x, center y, rotation in degrees)
    const ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
        (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
        (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
        (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
        (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
        (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
        (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
        (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
        (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
    ];
    DenseMatrix::from_fn(side, side, |r, c| {
        let x = super::pixel_center(c, side);
        // image rows grow downwards; the phantom's y axis points up
        let y = -super::pixel_center(r, side);
        let mut v = 0.0;
        for &(rho, a, b, x0, y0, deg) in ELLIPSES.iter() {
            let (s, co) = deg.to_radians().sin_cos();
            let (dx, dy) = (x - x0, y - y0);
            let (u, w) = (dx * co + dy * s, -dx * s + dy * co);
            if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                v += rho;
            }
        }
        v.clamp(0.0, 1.0)
    })
}
