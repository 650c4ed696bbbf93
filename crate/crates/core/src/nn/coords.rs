//! Conversion between regression vectors and valve meshes.
//!
//! A point is encoded as its crop-frame local position divided by the
//! crop's half extent, so the crop cube spans [−1, 1] on every axis.
//! Anterior points come first, row-major and xyz-interleaved.

use nalgebra::Vector3;

use super::densenet::OUTPUT_DIM;
use super::tensor::Real;
use crate::mesh::{Leaflet, QuadMesh, ValveMesh};
use crate::volume::CropFrame;
use crate::{Error, Result};

/// Number of values encoding the anterior leaflet.
pub const ANTERIOR_VALUES: usize = 3 * 19 * 9;

/// World positions of all 396 encoded points, without mesh validation.
pub fn decode_points<T: Real>(values: &[T], frame: &CropFrame) -> Result<Vec<Vector3<f64>>> {
    if values.len() != OUTPUT_DIM {
        return Err(Error::SizeMismatch {
            expected: OUTPUT_DIM,
            found: values.len(),
        });
    }
    let half = frame.half_extent_mm();
    Ok(values
        .chunks_exact(3)
        .map(|c| frame.from_local(Vector3::new(c[0].as_f64(), c[1].as_f64(), c[2].as_f64()) * half))
        .collect())
}

/// Decodes a regression vector into a mesh. Fails if the decoded grid
/// violates the mesh invariants (for instance coincident neighbours).
pub fn to_quadmesh<T: Real>(
    values: &[T],
    frame: &CropFrame,
    phase_index: usize,
) -> Result<ValveMesh> {
    let mut pts = decode_points(values, frame)?;
    let post = pts.split_off(ANTERIOR_VALUES / 3);
    let (ar, ac) = Leaflet::Anterior.dims();
    let (pr, pc) = Leaflet::Posterior.dims();
    ValveMesh::new(
        QuadMesh::new(Leaflet::Anterior, ar, ac, pts)?,
        QuadMesh::new(Leaflet::Posterior, pr, pc, post)?,
        phase_index,
    )
}

pub fn from_quadmesh<T: Real>(m: &ValveMesh, frame: &CropFrame) -> Vec<T> {
    let inv = 1.0 / frame.half_extent_mm();
    m.all_points()
        .flat_map(|p| {
            let l = frame.to_local(p) * inv;
            [T::lit(l.x), T::lit(l.y), T::lit(l.z)]
        })
        .collect()
}
