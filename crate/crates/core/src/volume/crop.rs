use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::Volume;
use crate::{Error, Result};

pub const DEFAULT_CROP_DIM: usize = 64;

const DEGENERACY_EPS: f64 = 1e-6;

/// The four annulus landmarks (mm, world frame) that fix the crop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub trigone_a: Vector3<f64>,
    pub trigone_b: Vector3<f64>,
    pub opposing_annulus: Vector3<f64>,
    pub annulus_centroid: Vector3<f64>,
}

impl LandmarkSet {
    pub fn points(&self) -> [Vector3<f64>; 4] {
        [
            self.trigone_a,
            self.trigone_b,
            self.opposing_annulus,
            self.annulus_centroid,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .points()
            .iter()
            .any(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidArgument("landmarks must be finite".into()));
        }
        if (self.trigone_a - self.trigone_b).norm() == 0.0 {
            return Err(Error::Degenerate("trigone points coincide".into()));
        }
        Ok(())
    }

    /// Checks the landmark invariants including that the annulus centroid
    /// lies inside the source volume's bounding box.
    pub fn validate_for(&self, v: &Volume) -> Result<()> {
        self.validate()?;
        let (lo, hi) = v.bounds();
        let c = self.annulus_centroid;
        if (0..3).any(|i| c[i] < lo[i] || c[i] > hi[i]) {
            return Err(Error::InvalidArgument(format!(
                "annulus centroid {:?} outside volume bounds",
                c.as_slice()
            )));
        }
        Ok(())
    }
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lm: LandmarkSet = serde_json::from_str(&text).map_err(|e| Error::format("landmarks", e))?;
    lm.validate()?;
    Ok(lm)
}

pub fn save_landmarks(path: impl AsRef<Path>, lm: &LandmarkSet) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(lm).map_err(|e| Error::format("landmarks", e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// An oriented, scaled sampling grid.
///
/// Output voxel `p` sits at `center + axes · (p − out_dims/2) · scale` in
/// world millimetres, with `out_dims/2` taken as integer halves. The
/// columns of `axes` are the frame's unit axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropFrame {
    pub center: Vector3<f64>,
    pub axes: Matrix3<f64>,
    pub scale: f64,
    pub out_dims: [usize; 3],
}

impl CropFrame {
    pub fn new(
        center: Vector3<f64>,
        axes: Matrix3<f64>,
        scale: f64,
        out_dims: [usize; 3],
    ) -> Result<Self> {
        let f = Self {
            center,
            axes,
            scale,
            out_dims,
        };
        f.validate()?;
        Ok(f)
    }

    /// Identity-axes frame centred on the local origin. Crops produced by
    /// [`crop_oriented`] live in this frame.
    pub fn local(scale: f64, out_dims: [usize; 3]) -> Self {
        Self {
            center: Vector3::zeros(),
            axes: Matrix3::identity(),
            scale,
            out_dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "crop scale must be positive, got {}",
                self.scale
            )));
        }
        if self.out_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("crop dims must be positive".into()));
        }
        let gram = self.axes * self.axes.transpose();
        if (gram - Matrix3::identity()).abs().max() > 1e-9 {
            return Err(Error::InvalidArgument(
                "crop axes are not orthonormal".into(),
            ));
        }
        if self.axes.determinant() <= 0.0 {
            return Err(Error::InvalidArgument("crop axes are left-handed".into()));
        }
        Ok(())
    }

    pub fn half_dims(&self) -> Vector3<f64> {
        Vector3::new(
            (self.out_dims[0] / 2) as f64,
            (self.out_dims[1] / 2) as f64,
            (self.out_dims[2] / 2) as f64,
        )
    }

    pub fn voxel_to_world(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.center + self.axes * ((p - self.half_dims()) * self.scale)
    }

    pub fn world_to_voxel(&self, w: Vector3<f64>) -> Vector3<f64> {
        self.to_local(w) / self.scale + self.half_dims()
    }

    /// World mm → frame-local mm (rotation only, no scaling).
    pub fn to_local(&self, w: Vector3<f64>) -> Vector3<f64> {
        self.axes.transpose() * (w - self.center)
    }

    pub fn from_local(&self, l: Vector3<f64>) -> Vector3<f64> {
        self.center + self.axes * l
    }

    /// Half extent of the crop in mm along its smallest axis.
    pub fn half_extent_mm(&self) -> f64 {
        let m = *self.out_dims.iter().min().unwrap_or(&0);
        self.scale * (m / 2) as f64
    }

    /// Spacing and origin of a crop volume expressed in local coordinates.
    pub fn local_geometry(&self) -> ([f64; 3], [f64; 3]) {
        let h = self.half_dims() * -self.scale;
        ([self.scale; 3], [h.x, h.y, h.z])
    }
}

/// Builds the annulus-aligned crop frame.
///
/// The first axis runs from the trigone midpoint to the opposing annulus
/// point, the second along trigone_a → trigone_b after Gram–Schmidt, the
/// third completes a right-handed basis. The scale fits the landmark
/// bounding sphere, enlarged by `margin`, inside the crop.
pub fn build_crop_frame(lm: &LandmarkSet, margin: f64, out_dims: [usize; 3]) -> Result<CropFrame> {
    lm.validate()?;
    if !(margin >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "margin must be >= 1, got {margin}"
        )));
    }
    if out_dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidArgument(
            "crop dims must be at least 2".into(),
        ));
    }
    let mid = (lm.trigone_a + lm.trigone_b) * 0.5;
    let forward = lm.opposing_annulus - mid;
    let across = lm.trigone_b - lm.trigone_a;
    if forward.norm() < DEGENERACY_EPS {
        return Err(Error::Degenerate(
            "opposing annulus point coincides with trigone midpoint".into(),
        ));
    }
    let a1 = forward.normalize();
    let across_n = across.normalize();
    if a1.cross(&across_n).norm() < DEGENERACY_EPS {
        return Err(Error::Degenerate("landmarks are collinear".into()));
    }
    let a2 = (across_n - a1 * a1.dot(&across_n)).normalize();
    let a3 = a1.cross(&a2);
    let axes = Matrix3::from_columns(&[a1, a2, a3]);

    let center = lm.annulus_centroid;
    let radius = lm
        .points()
        .iter()
        .map(|p| (p - center).norm())
        .fold(0.0, f64::max);
    if radius < DEGENERACY_EPS {
        return Err(Error::Degenerate("landmarks collapse to a point".into()));
    }
    let half = (*out_dims.iter().min().unwrap() / 2) as f64;
    CropFrame::new(center, axes, radius * margin / half, out_dims)
}

/// Resamples `v` on the frame's grid with trilinear interpolation; samples
/// outside `v` are zero. The result is expressed in frame-local coordinates
/// (identity axes, origin at `-out_dims/2 · scale`).
pub fn crop_oriented(v: &Volume, f: &CropFrame) -> Result<Volume> {
    f.validate()?;
    let [nx, ny, nz] = f.out_dims;
    let mut data = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let w = f.voxel_to_world(Vector3::new(i as f64, j as f64, k as f64));
                data.push(v.sample_world(w) as f32);
            }
        }
    }
    let (spacing, origin) = f.local_geometry();
    Volume::new(f.out_dims, spacing, origin, data)
}
