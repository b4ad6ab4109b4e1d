//! Orthonormal discrete Fourier transforms and the masked-Fourier
//! measurement operator.
//!
//! A retained coefficient contributes two real measurements, its real and
//! imaginary parts, in ascending coefficient order (`ky * W + kx`).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{dim_err, Error, Result};
use crate::linalg::DenseMatrix;

fn fft_in_place(buf: &mut [Complex64], direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft(buf.len(), direction);
    fft.process(buf);
}

/// Orthonormal 1D DFT of a real sequence.
pub fn dft_1d(signal: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if buf.is_empty() {
        return buf;
    }
    fft_in_place(&mut buf, FftDirection::Forward);
    let s = 1.0 / (signal.len() as f64).sqrt();
    buf.iter_mut().for_each(|c| *c *= s);
    buf
}

fn transform_2d(data: &mut [Complex64], h: usize, w: usize, direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(w, direction);
    for row in data.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(h, direction);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = data[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            data[r * w + c] = col[r];
        }
    }
    let s = 1.0 / ((h * w) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= s);
}

/// Orthonormal 2D DFT of a row-major real `h × w` image.
pub fn dft_2d(image: &[f64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    if image.len() != h * w || image.is_empty() {
        return dim_err(format!("{} values for a {h}x{w} image", image.len()));
    }
    let mut buf: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut buf, h, w, FftDirection::Forward);
    Ok(buf)
}

/// Inverse of [`dft_2d`].
pub fn idft_2d(spectrum: &[Complex64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    if spectrum.len() != h * w || spectrum.is_empty() {
        return dim_err(format!("{} coefficients for a {h}x{w} image", spectrum.len()));
    }
    let mut buf = spectrum.to_vec();
    transform_2d(&mut buf, h, w, FftDirection::Inverse);
    Ok(buf)
}

/// Boolean mask over 2D DFT coefficients, closed under `k ↦ −k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FourierMask {
    height: usize,
    width: usize,
    keep: Vec<bool>,
}

impl FourierMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, keep: vec![true; height * width] }
    }

    /// Build from an explicit mask; fails unless it is Hermitian-symmetric.
    pub fn from_mask(height: usize, width: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != height * width || keep.is_empty() {
            return dim_err(format!("{} mask entries for {height}x{width}", keep.len()));
        }
        let m = Self { height, width, keep };
        for k in 0..m.keep.len() {
            if m.keep[k] != m.keep[m.conjugate(k)] {
                return Err(Error::InvalidArgument(format!("mask not Hermitian-symmetric at coefficient {k}")));
            }
        }
        Ok(m)
    }

    /// Random symmetric mask keeping `⌈fraction · H·W⌉` coefficients.
    ///
    /// DC is always kept. Conjugate pairs are drawn at random and, when the
    /// count is odd, one extra self-conjugate coefficient fills the gap. With
    /// an odd-sized grid DC is the only self-conjugate point, so the count can
    /// exceed the target by one.
    pub fn random(height: usize, width: usize, fraction: f64, seed: u64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("empty Fourier mask".into()));
        }
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("sampling fraction {fraction} outside (0, 1]")));
        }
        let n = height * width;
        let target = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut m = Self { height, width, keep: vec![false; n] };
        m.keep[0] = true;
        let mut count = 1;
        let (mut pairs, mut selfconj) = (Vec::new(), Vec::new());
        for k in 1..n {
            let c = m.conjugate(k);
            if c == k {
                selfconj.push(k);
            } else if k < c {
                pairs.push(k);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pairs.shuffle(&mut rng);
        selfconj.shuffle(&mut rng);
        let mut pairs = pairs.into_iter();
        let mut selfconj = selfconj.into_iter();
        while count < target {
            let remaining = target - count;
            if remaining == 1 {
                if let Some(k) = selfconj.next() {
                    m.keep[k] = true;
                    count += 1;
                    continue;
                }
            }
            match pairs.next() {
                Some(k) => {
                    m.keep[k] = true;
                    let c = m.conjugate(k);
                    m.keep[c] = true;
                    count += 2;
                }
                None => match selfconj.next() {
                    Some(k) => {
                        m.keep[k] = true;
                        count += 1;
                    }
                    None => break,
                },
            }
        }
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Index of the coefficient at `−k`.
    pub fn conjugate(&self, k: usize) -> usize {
        let (ky, kx) = (k / self.width, k % self.width);
        let cy = (self.height - ky) % self.height;
        let cx = (self.width - kx) % self.width;
        cy * self.width + cx
    }

    pub fn is_kept(&self, k: usize) -> bool {
        self.keep[k]
    }

    pub fn retained(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&k| self.keep[k]).collect()
    }

    pub fn retained_count(&self) -> usize {
        self.keep.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.retained_count() as f64 / self.keep.len() as f64
    }

    pub fn as_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.height, self.width, |r, c| f64::from(u8::from(self.keep[r * self.width + c])))
    }
}

/// Retained DFT coefficients of a real image, in ascending index order.
pub fn fourier_measure(signal: &DenseMatrix, mask: &FourierMask) -> Result<Vec<Complex64>> {
    if signal.shape() != (mask.height, mask.width) {
        return dim_err(format!("signal {:?} for a {}x{} mask", signal.shape(), mask.height, mask.width));
    }
    let spec = dft_2d(signal.as_slice(), mask.height, mask.width)?;
    Ok(mask.retained().into_iter().map(|k| spec[k]).collect())
}

/// Real-valued linear operator `x ↦ (Re, Im)` of the retained coefficients.
#[derive(Debug, Clone)]
pub struct FourierOperator {
    mask: FourierMask,
    retained: Vec<usize>,
}

impl FourierOperator {
    pub fn new(mask: FourierMask) -> Self {
        let retained = mask.retained();
        Self { mask, retained }
    }

    pub fn mask(&self) -> &FourierMask {
        &self.mask
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn pixel_count(&self) -> usize {
        self.mask.height * self.mask.width
    }

    pub fn measurement_len(&self) -> usize {
        2 * self.retained.len()
    }

    pub fn apply(&self, image: &[f64]) -> Result<Vec<f64>> {
        let spec = dft_2d(image, self.height(), self.width())?;
        let mut out = Vec::with_capacity(self.measurement_len());
        for &k in &self.retained {
            out.push(spec[k].re);
            out.push(spec[k].im);
        }
        Ok(out)
    }

    /// Transpose of [`apply`](Self::apply): `Re(Fᴴ z)` with `z` the zero-filled spectrum.
    pub fn adjoint(&self, measurement: &[f64]) -> Result<Vec<f64>> {
        if measurement.len() != self.measurement_len() {
            return dim_err(format!("{} measurements, expected {}", measurement.len(), self.measurement_len()));
        }
        let mut z = vec![Complex64::new(0.0, 0.0); self.pixel_count()];
        for (j, &k) in self.retained.iter().enumerate() {
            z[k] = Complex64::new(measurement[2 * j], measurement[2 * j + 1]);
        }
        Ok(idft_2d(&z, self.height(), self.width())?.into_iter().map(|c| c.re).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn naive_dft_2d(x: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let s = 1.0 / ((h * w) as f64).sqrt();
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let ph = -2.0 * PI * ((ky * r) as f64 / h as f64 + (kx * c) as f64 / w as f64);
                        acc += x[r * w + c] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[ky * w + kx] = acc * s;
            }
        }
        out
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matches_naive_dft() {
        let (h, w) = (6, 10);
        let x = random_image(h, w, 1);
        let fast = dft_2d(&x, h, w).unwrap();
        let slow = naive_dft_2d(&x, h, w);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn full_mask_round_trip() {
        let (h, w) = (16, 16);
        let x = random_image(h, w, 2);
        let sig = DenseMatrix::new(h, w, x.clone()).unwrap();
        let coeffs = fourier_measure(&sig, &FourierMask::full(h, w)).unwrap();
        let back = idft_2d(&coeffs, h, w).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a.re - b).abs() < 1e-10 && a.im.abs() < 1e-10);
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let mut x = vec![0.0; 64];
        x[9] = 1.0;
        let sig = DenseMatrix::new(8, 8, x).unwrap();
        let mask = FourierMask::random(8, 8, 0.3, 4).unwrap();
        for c in fourier_measure(&sig, &mask).unwrap() {
            assert!((c.norm() - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_retained_count_and_symmetry() {
        for (side, frac, seed) in [(16usize, 0.25, 1u64), (32, 0.1, 2), (8, 0.33, 3), (64, 0.2, 9)] {
            let m = FourierMask::random(side, side, frac, seed).unwrap();
            let n = side * side;
            assert_eq!(m.retained_count(), (frac * n as f64).ceil() as usize);
            for k in 0..n {
                assert_eq!(m.is_kept(k), m.is_kept(m.conjugate(k)));
            }
            assert!(m.is_kept(0));
        }
        assert!(FourierMask::random(4, 4, 0.0, 0).is_err());
        let odd = FourierMask::random(5, 5, 0.5, 0).unwrap();
        assert!(odd.retained_count() == 13 || odd.retained_count() == 14);
    }

    #[test]
    fn asymmetric_mask_rejected() {
        let mut keep = vec![false; 16];
        keep[1] = true;
        assert!(FourierMask::from_mask(4, 4, keep).is_err());
    }

    #[test]
    fn operator_adjoint_identity() {
        let (h, w) = (12, 8);
        let op = FourierOperator::new(FourierMask::random(h, w, 0.4, 5).unwrap());
        let x = random_image(h, w, 6);
        let y = random_image(1, op.measurement_len(), 7);
        let lhs: f64 = op.apply(&x).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = op.adjoint(&y).unwrap().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn basis_image_matches_per_coefficient_oracle() {
        let (h, w) = (4, 6);
        let op = FourierOperator::new(FourierMask::random(h, w, 0.5, 8).unwrap());
        let mut x = vec![0.0; h * w];
        x[7] = 1.0;
        let m = op.apply(&x).unwrap();
        let (r, c) = (1.0, 1.0);
        for (j, k) in op.mask().retained().into_iter().enumerate() {
            let (ky, kx) = ((k / w) as f64, (k % w) as f64);
            let ph = -2.0 * PI * (ky * r / h as f64 + kx * c / w as f64);
            let s = 1.0 / ((h * w) as f64).sqrt();
            assert!((m[2 * j] - s * ph.cos()).abs() < 1e-12);
            assert!((m[2 * j + 1] - s * ph.sin()).abs() < 1e-12);
        }
    }
}
