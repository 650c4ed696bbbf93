//! Leaflet quadmeshes, point-to-surface distances, chamfer / Hausdorff
//! metrics, voxel rasterization and mesh files.

mod distance;
mod io;
mod metrics;
mod raster;

pub use distance::{
    closest_point_on_triangle, point_surface_distance, point_triangle_distance, triangulate,
    Triangle,
};
pub use io::{
    load_mesh, quadmesh_to_obj, save_mesh, save_obj, valve_from_json, valve_to_json, valve_to_obj,
};
pub use metrics::{
    chamfer_distance, hausdorff_distance, surface_metrics, HdPhaseReduction, LeafletScores,
    SurfaceMetrics,
};
pub use raster::{rasterize_mesh, LabelMask, DEFAULT_THICKNESS_MM};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ANTERIOR_DIMS: (usize, usize) = (19, 9);
pub const POSTERIOR_DIMS: (usize, usize) = (25, 9);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leaflet {
    Anterior,
    Posterior,
}

impl Leaflet {
    pub const ALL: [Leaflet; 2] = [Leaflet::Anterior, Leaflet::Posterior];

    /// Grid dims as (rows along the annulus, cols annulus → free edge).
    pub fn dims(self) -> (usize, usize) {
        match self {
            Leaflet::Anterior => ANTERIOR_DIMS,
            Leaflet::Posterior => POSTERIOR_DIMS,
        }
    }

    pub fn point_count(self) -> usize {
        let (r, c) = self.dims();
        r * c
    }

    pub fn name(self) -> &'static str {
        match self {
            Leaflet::Anterior => "anterior",
            Leaflet::Posterior => "posterior",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "anterior" => Some(Leaflet::Anterior),
            "posterior" => Some(Leaflet::Posterior),
            _ => None,
        }
    }
}

/// A rows × cols lattice of points (mm), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadMesh {
    rows: usize,
    cols: usize,
    points: Vec<Vector3<f64>>,
    leaflet: Leaflet,
}

impl QuadMesh {
    pub fn new(
        leaflet: Leaflet,
        rows: usize,
        cols: usize,
        points: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        if (rows, cols) != leaflet.dims() {
            return Err(Error::Shape(format!(
                "{} leaflet must be {:?}, got ({rows}, {cols})",
                leaflet.name(),
                leaflet.dims()
            )));
        }
        Self::new_unchecked_dims(leaflet, rows, cols, points)
    }

    /// Like [`QuadMesh::new`] but without the fixed leaflet grid dims; used
    /// for generic lattices in tests and tooling.
    pub fn new_unchecked_dims(
        leaflet: Leaflet,
        rows: usize,
        cols: usize,
        points: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::Shape(format!(
                "lattice must be at least 2x2, got {rows}x{cols}"
            )));
        }
        if points.len() != rows * cols {
            return Err(Error::SizeMismatch {
                expected: rows * cols,
                found: points.len(),
            });
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        let m = Self {
            rows,
            cols,
            points,
            leaflet,
        };
        for r in 0..rows {
            for c in 0..cols {
                let p = m.at(r, c);
                let right = (c + 1 < cols).then(|| m.at(r, c + 1));
                let down = (r + 1 < rows).then(|| m.at(r + 1, c));
                for q in [right, down].into_iter().flatten() {
                    if (p - q).norm() <= 1e-9 {
                        return Err(Error::Degenerate(format!(
                            "coincident adjacent grid points at ({r}, {c})"
                        )));
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn leaflet(&self) -> Leaflet {
        self.leaflet
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> Vector3<f64> {
        self.points[r * self.cols + c]
    }

    pub fn map_points(&self, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Result<Self> {
        Self::new_unchecked_dims(
            self.leaflet,
            self.rows,
            self.cols,
            self.points.iter().map(|&p| f(p)).collect(),
        )
    }
}

/// Both leaflets of one cardiac phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ValveMesh {
    pub anterior: QuadMesh,
    pub posterior: QuadMesh,
    pub phase_index: usize,
}

impl ValveMesh {
    pub fn new(anterior: QuadMesh, posterior: QuadMesh, phase_index: usize) -> Result<Self> {
        if anterior.leaflet != Leaflet::Anterior || posterior.leaflet != Leaflet::Posterior {
            return Err(Error::InvalidArgument(
                "leaflet tags do not match their slots".into(),
            ));
        }
        Ok(Self {
            anterior,
            posterior,
            phase_index,
        })
    }

    pub fn leaflet(&self, l: Leaflet) -> &QuadMesh {
        match l {
            Leaflet::Anterior => &self.anterior,
            Leaflet::Posterior => &self.posterior,
        }
    }

    pub fn map_points(&self, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Result<Self> {
        Ok(Self {
            anterior: self.anterior.map_points(&f)?,
            posterior: self.posterior.map_points(&f)?,
            phase_index: self.phase_index,
        })
    }

    /// All points, anterior first, each leaflet row-major.
    pub fn all_points(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.anterior
            .points
            .iter()
            .chain(self.posterior.points.iter())
            .copied()
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn enforces_leaflet_dims() {
        let pts = vec![Vector3::zeros(); 171];
        assert!(matches!(
            QuadMesh::new(Leaflet::Posterior, 19, 9, pts),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn rejects_coincident_neighbours() {
        let mut m = wavy(Leaflet::Anterior, Vector3::zeros(), 0.5);
        m.points[1] = m.points[0];
        assert!(matches!(
            QuadMesh::new(Leaflet::Anterior, 19, 9, m.points),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn valve_rejects_swapped_slots() {
        let v = wavy_valve(0.3);
        assert!(ValveMesh::new(v.posterior.clone(), v.anterior.clone(), 0).is_err());
    }
}
