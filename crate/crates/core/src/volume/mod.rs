//! Scalar volumes, `.vol` persistence, intensity windowing, oriented
//! cropping and the augmentation battery.

mod augment;
mod crop;
mod io;

pub use augment::{
    augment, augmentation_grid, make_augmentation_batch, AugmentSpec, AUGMENTATION_COUNT,
};
pub use crop::{
    build_crop_frame, crop_oriented, load_landmarks, save_landmarks, CropFrame, LandmarkSet,
    DEFAULT_CROP_DIM,
};
pub use io::{load_volume, read_volume, save_volume, write_volume};

use nalgebra::Vector3;

use crate::{Error, Result};

/// Default intensity window in Hounsfield units.
pub const DEFAULT_WINDOW: (f64, f64) = (-200.0, 800.0);

/// A 3D scalar field on a regular axis-aligned grid, x-fastest.
///
/// The world position of voxel `(i, j, k)` is `origin + spacing ∘ (i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        data: Vec<f32>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "dims must be positive, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "origin must be finite, got {origin:?}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn filled(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        value: f32,
    ) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, origin, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    /// Replaces the payload, keeping the geometry. Values must stay finite.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.origin, data)
    }

    /// World position of a (possibly fractional) voxel index.
    pub fn voxel_to_world(&self, idx: Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + self.spacing[0] * idx.x,
            self.origin[1] + self.spacing[1] * idx.y,
            self.origin[2] + self.spacing[2] * idx.z,
        )
    }

    pub fn world_to_voxel(&self, p: Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        )
    }

    /// Rotation/scaling pivot: the world position of voxel `dims / 2`
    /// (integer half). For crops this coincides with the crop center.
    pub fn center(&self) -> Vector3<f64> {
        self.voxel_to_world(Vector3::new(
            (self.dims[0] / 2) as f64,
            (self.dims[1] / 2) as f64,
            (self.dims[2] / 2) as f64,
        ))
    }

    /// Axis-aligned world bounding box spanned by the voxel centers.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let lo = Vector3::from(self.origin);
        let hi = self.voxel_to_world(Vector3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        ));
        (lo, hi)
    }

    /// Trilinear sample at a continuous voxel index. Corners outside the grid
    /// contribute zero.
    pub fn sample_index(&self, u: Vector3<f64>) -> f64 {
        let [nx, ny, nz] = self.dims;
        if !(u.x > -1.0 && u.y > -1.0 && u.z > -1.0)
            || !(u.x < nx as f64 && u.y < ny as f64 && u.z < nz as f64)
        {
            return 0.0;
        }
        let fx = u.x.floor();
        let fy = u.y.floor();
        let fz = u.z.floor();
        let (tx, ty, tz) = (u.x - fx, u.y - fy, u.z - fz);
        let (x0, y0, z0) = (fx as i64, fy as i64, fz as i64);
        let fetch = |x: i64, y: i64, z: i64| -> f64 {
            if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
                0.0
            } else {
                self.get(x as usize, y as usize, z as usize) as f64
            }
        };
        let c00 = fetch(x0, y0, z0) * (1.0 - tx) + fetch(x0 + 1, y0, z0) * tx;
        let c10 = fetch(x0, y0 + 1, z0) * (1.0 - tx) + fetch(x0 + 1, y0 + 1, z0) * tx;
        let c01 = fetch(x0, y0, z0 + 1) * (1.0 - tx) + fetch(x0 + 1, y0, z0 + 1) * tx;
        let c11 = fetch(x0, y0 + 1, z0 + 1) * (1.0 - tx) + fetch(x0 + 1, y0 + 1, z0 + 1) * tx;
        let c0 = c00 * (1.0 - ty) + c10 * ty;
        let c1 = c01 * (1.0 - ty) + c11 * ty;
        c0 * (1.0 - tz) + c1 * tz
    }

    /// Trilinear sample at a world position.
    pub fn sample_world(&self, p: Vector3<f64>) -> f64 {
        self.sample_index(self.world_to_voxel(p))
    }
}

/// Linear window mapping `[lo, hi]` onto `[0, 1]` with clamping.
pub fn normalize(v: &Volume, window_lo: f64, window_hi: f64) -> Result<Volume> {
    if !(window_lo < window_hi) {
        return Err(Error::InvalidArgument(format!(
            "window lower bound {window_lo} must be below upper bound {window_hi}"
        )));
    }
    let width = window_hi - window_lo;
    let data = v
        .data
        .iter()
        .map(|&x| ((x as f64 - window_lo) / width).clamp(0.0, 1.0) as f32)
        .collect();
    v.with_data(data)
}
