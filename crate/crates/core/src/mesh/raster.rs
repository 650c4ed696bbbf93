use nalgebra::Vector3;

use super::{point_triangle_distance, triangulate, Leaflet, ValveMesh};
use crate::volume::{CropFrame, Volume};
use crate::{Error, Result};

/// Default annotation slab thickness around each leaflet surface.
pub const DEFAULT_THICKNESS_MM: f64 = 2.0;

/// Per-voxel class labels on a crop grid. Class order matches the network
/// channels: 0 = anterior, 1 = posterior, 2 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    dims: [usize; 3],
    labels: Vec<u8>,
}

impl LabelMask {
    pub const ANTERIOR: u8 = 0;
    pub const POSTERIOR: u8 = 1;
    pub const BACKGROUND: u8 = 2;
    pub const CLASSES: usize = 3;

    pub fn new(dims: [usize; 3], labels: Vec<u8>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if labels.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if labels.iter().any(|&l| l as usize >= Self::CLASSES) {
            return Err(Error::InvalidArgument("label out of range".into()));
        }
        Ok(Self { dims, labels })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// Indicator of one class as `f32` values.
    pub fn channel(&self, class: u8) -> Vec<f32> {
        self.labels
            .iter()
            .map(|&l| if l == class { 1.0 } else { 0.0 })
            .collect()
    }

    /// Channel-major one-hot encoding, `3 × voxels`.
    pub fn one_hot(&self) -> Vec<f32> {
        (0..Self::CLASSES as u8)
            .flat_map(|c| self.channel(c))
            .collect()
    }

    /// One class channel as a volume on the given crop frame's local grid.
    pub fn channel_volume(&self, class: u8, frame: &CropFrame) -> Result<Volume> {
        if frame.out_dims != self.dims {
            return Err(Error::Shape("frame dims differ from mask dims".into()));
        }
        let (spacing, origin) = frame.local_geometry();
        Volume::new(self.dims, spacing, origin, self.channel(class))
    }
}

/// Labels every voxel of the frame's grid whose centre lies within
/// `thickness_mm / 2` of a leaflet surface; anterior wins ties.
pub fn rasterize_mesh(m: &ValveMesh, frame: &CropFrame, thickness_mm: f64) -> Result<LabelMask> {
    if !(thickness_mm > 0.0) || !thickness_mm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "thickness must be positive, got {thickness_mm}"
        )));
    }
    frame.validate()?;
    let dims = frame.out_dims;
    let n: usize = dims.iter().product();
    let half = 0.5 * thickness_mm;
    let reach = half / frame.scale;

    let mut nearest = [vec![f64::INFINITY; n], vec![f64::INFINITY; n]];
    for (dist, leaflet) in nearest.iter_mut().zip(Leaflet::ALL) {
        for tri in triangulate(m.leaflet(leaflet))? {
            let corners = [tri.a, tri.b, tri.c].map(|p| frame.world_to_voxel(p));
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            let mut empty = false;
            for ax in 0..3 {
                let mn = corners.iter().map(|c| c[ax]).fold(f64::INFINITY, f64::min) - reach;
                let mx = corners
                    .iter()
                    .map(|c| c[ax])
                    .fold(f64::NEG_INFINITY, f64::max)
                    + reach;
                let top = dims[ax] as f64 - 1.0;
                if mx < 0.0 || mn > top {
                    empty = true;
                    break;
                }
                lo[ax] = mn.max(0.0).ceil() as usize;
                hi[ax] = mx.min(top).floor() as usize;
            }
            if empty {
                continue;
            }
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let w = frame.voxel_to_world(Vector3::new(i as f64, j as f64, k as f64));
                        let d = point_triangle_distance(w, &tri);
                        let slot = &mut dist[i + dims[0] * (j + dims[1] * k)];
                        if d < *slot {
                            *slot = d;
                        }
                    }
                }
            }
        }
    }
    let labels = nearest[0]
        .iter()
        .zip(&nearest[1])
        .map(|(&a, &p)| {
            if a <= half {
                LabelMask::ANTERIOR
            } else if p <= half {
                LabelMask::POSTERIOR
            } else {
                LabelMask::BACKGROUND
            }
        })
        .collect();
    LabelMask::new(dims, labels)
}
