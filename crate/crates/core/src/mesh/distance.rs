use nalgebra::Vector3;

use super::QuadMesh;
use crate::{Error, Result};

const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub c: Vector3<f64>,
}

impl Triangle {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> Self {
        Self { a, b, c }
    }

    pub fn area(&self) -> f64 {
        0.5 * (self.b - self.a).cross(&(self.c - self.a)).norm()
    }
}

/// Splits every quad of the lattice along its shorter diagonal.
///
/// Quad `(r, c)` has corners p00 = (r, c), p10 = (r+1, c), p01 = (r, c+1)
/// and p11 = (r+1, c+1); ties go to the p00–p11 diagonal. Output order is
/// quad-major, row-major.
pub fn triangulate(m: &QuadMesh) -> Result<Vec<Triangle>> {
    let pts = m.points();
    Ok(triangle_indices(m)?
        .into_iter()
        .map(|[a, b, c]| Triangle::new(pts[a], pts[b], pts[c]))
        .collect())
}

/// Vertex indices (row-major) of the triangles produced by [`triangulate`].
pub(crate) fn triangle_indices(m: &QuadMesh) -> Result<Vec<[usize; 3]>> {
    let cols = m.cols();
    let pts = m.points();
    let mut out = Vec::with_capacity(2 * (m.rows() - 1) * (cols - 1));
    for r in 0..m.rows() - 1 {
        for c in 0..cols - 1 {
            let i00 = r * cols + c;
            let i10 = i00 + cols;
            let i01 = i00 + 1;
            let i11 = i10 + 1;
            let main = [[i00, i10, i11], [i00, i11, i01]];
            let anti = [[i00, i10, i01], [i10, i11, i01]];
            let area = |s: &[[usize; 3]; 2]| -> f64 {
                s.iter()
                    .map(|&[a, b, c]| Triangle::new(pts[a], pts[b], pts[c]).area())
                    .sum()
            };
            if area(&main) < AREA_EPS && area(&anti) < AREA_EPS {
                return Err(Error::Degenerate(format!("zero-area quad at ({r}, {c})")));
            }
            let chosen = if (pts[i00] - pts[i11]).norm() <= (pts[i10] - pts[i01]).norm() {
                main
            } else {
                anti
            };
            out.extend_from_slice(&chosen);
        }
    }
    Ok(out)
}

/// Closest point of a triangle to `p`, by Voronoi-region classification.
pub fn closest_point_on_triangle(p: Vector3<f64>, t: &Triangle) -> Vector3<f64> {
    let (a, b, c) = (t.a, t.b, t.c);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub fn point_triangle_distance(p: Vector3<f64>, t: &Triangle) -> f64 {
    (p - closest_point_on_triangle(p, t)).norm()
}

/// Exact minimum distance from `p` to the union of `surface`.
pub fn point_surface_distance(p: Vector3<f64>, surface: &[Triangle]) -> f64 {
    surface
        .iter()
        .map(|t| (p - closest_point_on_triangle(p, t)).norm_squared())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}
