//! Voxel occupancy grids and the shape-representation task.
//!
//! Grid files are a 16-byte header (`b"OCCGRID\0"` then `n` as a
//! little-endian u64) followed by `n³` bytes, 0 or 1, at index
//! `(z·n + y)·n + x`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grad::LossKind;
use crate::linalg::DenseMatrix;

use super::{pixel_center, BatchSchedule, ForwardOperator, OutputTransform, TaskKind, TaskSpec};

const MAGIC: &[u8; 8] = b"OCCGRID\0";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    side: usize,
    voxels: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(side: usize, voxels: Vec<bool>) -> Result<Self> {
        if voxels.len() != side * side * side {
            return Err(Error::Dimension(format!("{} voxels for side {side}", voxels.len())));
        }
        Ok(Self { side, voxels })
    }

    pub fn from_fn(side: usize, f: impl Fn(f64, f64, f64) -> bool) -> Self {
        let mut voxels = Vec::with_capacity(side * side * side);
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    voxels.push(f(pixel_center(x, side), pixel_center(y, side), pixel_center(z, side)));
                }
            }
        }
        Self { side, voxels }
    }

    /// Centered ball of the given radius in voxels.
    pub fn sphere(side: usize, radius: f64) -> Self {
        let r = 2.0 * radius / side as f64;
        Self::from_fn(side, |x, y, z| x * x + y * y + z * z <= r * r)
    }

    /// A torus around the z axis fused with a ball above it.
    pub fn torus_and_ball(side: usize) -> Self {
        Self::from_fn(side, |x, y, z| {
            let ring = ((x * x + y * y).sqrt() - 0.55).powi(2) + (z + 0.2).powi(2) <= 0.18 * 0.18;
            let ball = x * x + y * y + (z - 0.35).powi(2) <= 0.3 * 0.3;
            ring || ball
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn occupied(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    pub fn fraction(&self) -> f64 {
        self.occupied() as f64 / self.voxels.len() as f64
    }

    /// `3 × n³` voxel-center coordinates in file order.
    pub fn coordinates(&self) -> DenseMatrix {
        let n = self.side;
        DenseMatrix::from_fn(3, n * n * n, |d, t| {
            let k = match d {
                0 => t % n,
                1 => (t / n) % n,
                _ => t / (n * n),
            };
            pixel_center(k, n)
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.voxels.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.side as u64).to_le_bytes());
        out.extend(self.voxels.iter().map(|&v| u8::from(v)));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing occupancy grid header".into()));
        }
        let side = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        let n3 = side.checked_pow(3).ok_or_else(|| Error::Format(format!("grid side {side} too large")))?;
        if body.len() != n3 {
            return Err(Error::Format(format!("{} voxel bytes for side {side}", body.len())));
        }
        if let Some(b) = body.iter().find(|&&b| b > 1) {
            return Err(Error::Format(format!("voxel byte {b} is not 0 or 1")));
        }
        Self::new(side, body.iter().map(|&b| b == 1).collect())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }
}

/// Fit occupancy with binary cross-entropy, drawing `sample_count` random
/// voxels per iteration. The full grid stays available for evaluation.
pub fn make_occupancy_task(grid: &OccupancyGrid, sample_count: usize, seed: u64) -> Result<TaskSpec> {
    if grid.occupied() == 0 {
        return Err(Error::InvalidArgument("occupancy grid is empty".into()));
    }
    let n3 = grid.voxels.len();
    if sample_count == 0 || sample_count > n3 {
        return Err(Error::InvalidArgument(format!("sample count {sample_count} outside 1..={n3}")));
    }
    let targets: Vec<f64> = grid.voxels.iter().map(|&v| f64::from(u8::from(v))).collect();
    Ok(TaskSpec {
        kind: TaskKind::Occupancy { side: grid.side },
        coords: grid.coordinates(),
        reference: DenseMatrix::new(1, n3, targets.clone())?,
        measurements: targets,
        operator: ForwardOperator::Identity,
        loss: LossKind::BinaryCrossEntropy,
        transform: OutputTransform::Sigmoid,
        peak: 1.0,
        batch: Some(BatchSchedule { count: sample_count, seed }),
    })
}
