//! Relative approximation error per frequency band.
//!
//! Frequencies are folded to `|k| ≤ n/2` per axis and binned by radius
//! `r = √(fy² + fx²)` into `B` equal-width bands over `[0, r_max]`, where
//! `r_max = √(⌊H/2⌋² + ⌊W/2⌋²)`. A 1D signal is the `H = 1` case, so its
//! binning is linear in `|k|`.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::tasks::fourier::dft_2d;

const ENERGY_FLOOR: f64 = 1e-12;

/// Band of coefficient `(ky, kx)` on an `h × w` grid.
pub fn band_of(ky: usize, kx: usize, h: usize, w: usize, bands: usize) -> usize {
    let fy = ky.min(h - ky) as f64;
    let fx = kx.min(w - kx) as f64;
    let rmax = (((h / 2) as f64).powi(2) + ((w / 2) as f64).powi(2)).sqrt();
    if rmax == 0.0 {
        return 0;
    }
    let r = (fy * fy + fx * fx).sqrt();
    ((r / rmax * bands as f64).floor() as usize).min(bands - 1)
}

/// Band-limited energy of the DFT of every channel, summed over channels.
pub fn band_energies(signal: &DenseMatrix, h: usize, w: usize, bands: usize) -> Result<Vec<f64>> {
    if bands == 0 {
        return Err(Error::InvalidArgument("at least one band required".into()));
    }
    if signal.cols() != h * w {
        return Err(Error::Dimension(format!("{} samples for a {h}x{w} plane", signal.cols())));
    }
    let mut energy = vec![0.0; bands];
    for i in 0..signal.rows() {
        let spec: Vec<Complex64> = dft_2d(signal.row(i), h, w)?;
        for (k, c) in spec.iter().enumerate() {
            energy[band_of(k / w, k % w, h, w, bands)] += c.norm_sqr();
        }
    }
    Ok(energy)
}

/// `‖F(pred − target)‖_band / max(‖F(target)‖_band, 1e-12)`, clipped to `[0, 2]`.
///
/// `pred` and `target` are `C × (H·W)`; multi-channel energies are pooled.
pub fn frequency_band_errors(
    pred: &DenseMatrix,
    target: &DenseMatrix,
    plane: (usize, usize),
    bands: usize,
) -> Result<Vec<f64>> {
    let residual = pred.sub(target)?;
    let (h, w) = plane;
    let num = band_energies(&residual, h, w, bands)?;
    let den = band_energies(target, h, w, bands)?;
    Ok(num
        .iter()
        .zip(&den)
        .map(|(n, d)| (n.sqrt() / d.sqrt().max(ENERGY_FLOOR)).clamp(0.0, 2.0))
        .collect())
}
