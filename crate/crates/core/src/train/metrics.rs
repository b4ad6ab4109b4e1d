//! Reconstruction quality metrics.

use crate::error::{Error, Result};

/// PSNR reported for an exact reconstruction.
pub const PSNR_CAP_DB: f64 = 200.0;

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("metric over an empty signal".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &[f64], target: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be > 0, got {peak}")));
    }
    let e = mse(pred, target)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / e).log10()).min(PSNR_CAP_DB))
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window(radius: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..=2 * radius)
        .map(|k| {
            let d = k as f64 - radius as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean structural similarity of one `height × width` plane.
///
/// Uses an 11-tap Gaussian window (σ = 1.5) over the valid region, shrunk
/// to fit planes smaller than the window, with dynamic range `peak`.
pub fn ssim_plane(pred: &[f64], target: &[f64], height: usize, width: usize, peak: f64) -> Result<f64> {
    check_pair(pred, target)?;
    if pred.len() != height * width {
        return Err(Error::Dimension(format!("{} values for a {height}x{width} plane", pred.len())));
    }
    let ry = SSIM_RADIUS.min((height - 1) / 2);
    let rx = SSIM_RADIUS.min((width - 1) / 2);
    let (wy, wx) = (gaussian_window(ry), gaussian_window(rx));
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for r in ry..height - ry {
        for c in rx..width - rx {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, gy) in wy.iter().enumerate() {
                for (dx, gx) in wx.iter().enumerate() {
                    let idx = (r + dy - ry) * width + (c + dx - rx);
                    let g = gy * gx;
                    let (x, y) = (pred[idx], target[idx]);
                    mx += g * x;
                    my += g * y;
                    sxx += g * x * x;
                    syy += g * y * y;
                    sxy += g * x * y;
                }
            }
            let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM averaged over channels of channel-major data (`C` planes back to back).
pub fn ssim(pred: &[f64], target: &[f64], height: usize, width: usize, peak: f64) -> Result<f64> {
    check_pair(pred, target)?;
    let plane = height * width;
    if plane == 0 || pred.len() % plane != 0 {
        return Err(Error::Dimension(format!("{} values are not whole {height}x{width} planes", pred.len())));
    }
    let planes = pred.len() / plane;
    let mut acc = 0.0;
    for k in 0..planes {
        let span = k * plane..(k + 1) * plane;
        acc += ssim_plane(&pred[span.clone()], &target[span], height, width, peak)?;
    }
    Ok(acc / planes as f64)
}

/// Intersection over union of `value > threshold` sets; two empty sets give 1.
pub fn iou(pred: &[f64], target: &[f64], threshold: f64) -> Result<f64> {
    check_pair(pred, target)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.iter().zip(target) {
        let (a, b) = (p > threshold, t > threshold);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_inputs() {
        let x: Vec<f64> = (0..144).map(|k| (k as f64 * 0.37).sin() * 0.5 + 0.5).collect();
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), PSNR_CAP_DB);
        assert!((ssim(&x, &x, 12, 12, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(iou(&x, &x, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn psnr_twenty_db() {
        let target = vec![0.0; 100];
        let pred = vec![0.1; 100];
        assert!((psnr(&pred, &target, 1.0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn half_overlap_iou() {
        // A = {0, 1}, B = {1, 2}
        let a = [1.0, 1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 1.0, 0.0];
        assert!((iou(&a, &b, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(psnr(&[], &[], 1.0).is_err());
        assert!(ssim(&[], &[], 0, 0, 1.0).is_err());
        assert!(iou(&[], &[], 0.5).is_err());
        assert!(psnr(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn ssim_penalizes_structure_loss() {
        let x: Vec<f64> = (0..256).map(|k| (k % 16) as f64 / 15.0).collect();
        let flat = vec![0.5; 256];
        let s = ssim(&flat, &x, 16, 16, 1.0).unwrap();
        assert!(s < 0.1, "{s}");
        let noisy: Vec<f64> = x.iter().enumerate().map(|(k, v)| v + 0.02 * ((k * 7919 % 13) as f64 - 6.0) / 6.0).collect();
        let s2 = ssim(&noisy, &x, 16, 16, 1.0).unwrap();
        assert!(s2 > 0.9 && s2 < 1.0, "{s2}");
    }

    #[test]
    fn ssim_small_plane() {
        let x = [0.1, 0.9, 0.4, 0.2, 0.6, 0.3];
        assert!((ssim(&x, &x, 2, 3, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn psnr_monotone_in_mse(a in 0.001f64..0.5, b in 0.001f64..0.5) {
            let target = vec![0.0; 10];
            let pa = psnr(&vec![a; 10], &target, 1.0).unwrap();
            let pb = psnr(&vec![b; 10], &target, 1.0).unwrap();
            prop_assert_eq!(a < b, pa > pb);
        }
    }
}
