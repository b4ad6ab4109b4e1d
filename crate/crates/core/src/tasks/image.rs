//! Portable pixmap I/O and the image-fitting task.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grad::LossKind;
use crate::linalg::DenseMatrix;

use super::{grid_2d, ForwardOperator, OutputTransform, TaskKind, TaskSpec};

/// Row-major, pixel-interleaved image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// `C × (H·W)` matrix, sample `t = r·W + c`.
    pub fn to_channel_matrix(&self) -> DenseMatrix {
        let t = self.pixel_count();
        DenseMatrix::from_fn(self.channels, t, |i, s| self.data[s * self.channels + i])
    }

    pub fn from_channel_matrix(m: &DenseMatrix, width: usize, height: usize) -> Result<Self> {
        let (c, t) = m.shape();
        if t != width * height {
            return Err(Error::Dimension(format!("{t} samples for a {width}x{height} image")));
        }
        let mut data = vec![0.0; t * c];
        for s in 0..t {
            for i in 0..c {
                data[s * c + i] = m[(i, s)];
            }
        }
        Self::new(width, height, c, data)
    }

    /// Top-left `w × h` crop starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for r in y0..y0 + h {
            let start = (r * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Self::new(w, h, self.channels, data)
    }
}

/// Procedural RGB test image mixing smooth gradients, sharp edges and fine
/// oscillations.
pub fn synthetic_image(side: usize) -> Image {
    use std::f64::consts::PI;
    let mut data = Vec::with_capacity(side * side * 3);
    for r in 0..side {
        for c in 0..side {
            let x = super::pixel_center(c, side);
            let y = super::pixel_center(r, side);
            let rad = (x * x + y * y).sqrt();
            let disk = if ((x - 0.3).powi(2) + (y + 0.2).powi(2)).sqrt() < 0.35 { 1.0 } else { 0.0 };
            let stripes = 0.5 + 0.5 * (2.0 * PI * 10.0 * (x + 0.5 * y) / 2.0).sin();
            let check = if ((x * 4.0).floor() as i64 + (y * 4.0).floor() as i64) % 2 == 0 { 1.0 } else { 0.0 };
            let red = 0.25 + 0.35 * (1.0 - rad) + 0.3 * disk;
            let green = 0.2 + 0.5 * stripes * (if y < 0.0 { 1.0 } else { 0.35 }) + 0.15 * disk;
            let blue = 0.3 + 0.3 * check * (if x < 0.0 { 1.0 } else { 0.3 }) + 0.2 * (PI * 3.0 * y).cos() * 0.5;
            for v in [red, green, blue] {
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image { width: side, height: side, channels: 3, data }
}

fn read_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("expected a number at byte {start}")))
}

/// Decode binary P5 (gray) or P6 (RGB) with maxval up to 65535.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Format("not a binary P5/P6 pixmap".into())),
    };
    let mut pos = 2;
    let width = read_token(bytes, &mut pos)?;
    let height = read_token(bytes, &mut pos)?;
    let maxval = read_token(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("maxval {maxval} out of range")));
    }
    if bytes.get(pos).map_or(true, |b| !b.is_ascii_whitespace()) {
        return Err(Error::Format("missing whitespace after header".into()));
    }
    pos += 1;
    let n = width * height * channels;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Format(format!("raster truncated: need {need} bytes")))?;
    let scale = 1.0 / maxval as f64;
    let data = if wide {
        raster.chunks(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 * scale).collect()
    } else {
        raster.iter().map(|&b| b as f64 * scale).collect()
    };
    Image::new(width, height, channels, data)
}

/// Encode as 8-bit P5/P6, rounding and clamping to `[0, 255]`.
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_ppm(&bytes)
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_ppm(image))?;
    Ok(())
}

/// Fit pixel values at pixel-center coordinates; values are divided by `norm_peak`.
pub fn make_image_task(image: &Image, norm_peak: f64) -> Result<TaskSpec> {
    if image.pixel_count() == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    if !(norm_peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be > 0, got {norm_peak}")));
    }
    let reference = image.to_channel_matrix().scale(1.0 / norm_peak);
    Ok(TaskSpec {
        kind: TaskKind::Image { height: image.height, width: image.width, channels: image.channels },
        coords: grid_2d(image.height, image.width),
        measurements: reference.as_slice().to_vec(),
        reference,
        operator: ForwardOperator::Identity,
        loss: LossKind::L2,
        transform: OutputTransform::Identity,
        peak: 1.0,
        batch: None,
    })
}

/// Model size in bits per pixel.
pub fn bpp(param_count: usize, bits_per_param: u32, pixel_count: usize) -> Result<f64> {
    if pixel_count == 0 {
        return Err(Error::InvalidArgument("zero pixels".into()));
    }
    Ok(param_count as f64 * bits_per_param as f64 / pixel_count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpp_formula() {
        assert_eq!(bpp(1000, 32, 64 * 64).unwrap(), 7.8125);
        assert!(bpp(1, 32, 0).is_err());
    }

    #[test]
    fn single_pixel_task() {
        let img = Image::new(1, 1, 3, vec![0.2, 0.4, 0.6]).unwrap();
        let t = make_image_task(&img, 1.0).unwrap();
        assert_eq!(t.coords.as_slice(), &[0.0, 0.0]);
        assert_eq!(t.reference.shape(), (3, 1));
        t.validate().unwrap();
    }

    #[test]
    fn ppm_round_trip() {
        let img = synthetic_image(9);
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!((back.width, back.height, back.channels), (9, 9, 3));
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        // bytes are a fixed point after one quantization
        assert_eq!(encode_ppm(&back), bytes);
    }

    #[test]
    fn ppm_header_with_comments_and_16_bit() {
        let mut bytes = b"P5\n# comment\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x00, 0x00]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.data, vec![1.0, 0.0]);
    }

    #[test]
    fn ppm_rejects_bad_input() {
        assert!(decode_ppm(b"P3\n1 1\n255\n0").is_err());
        assert!(decode_ppm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_ppm(b"P5\n0 2\n255\n").is_err());
    }

    #[test]
    fn channel_matrix_round_trip_and_crop() {
        let img = synthetic_image(8);
        let m = img.to_channel_matrix();
        assert_eq!(Image::from_channel_matrix(&m, 8, 8).unwrap(), img);
        let c = img.crop(2, 3, 4, 2).unwrap();
        assert_eq!(c.data[..3], img.data[(3 * 8 + 2) * 3..(3 * 8 + 2) * 3 + 3]);
        assert!(img.crop(6, 0, 4, 1).is_err());
    }

    #[test]
    fn pixel_values_in_range() {
        let img = synthetic_image(32);
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
