use serde::{Deserialize, Serialize};

use super::{point_surface_distance, triangulate, Leaflet, QuadMesh, ValveMesh};
use crate::{Error, Result};

/// A per-leaflet score pair; the overall value is their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafletScores {
    pub anterior: f64,
    pub posterior: f64,
}

impl LeafletScores {
    pub fn overall(&self) -> f64 {
        0.5 * (self.anterior + self.posterior)
    }

    pub fn get(&self, l: Leaflet) -> f64 {
        match l {
            Leaflet::Anterior => self.anterior,
            Leaflet::Posterior => self.posterior,
        }
    }
}

/// How per-phase Hausdorff values are reduced within a patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HdPhaseReduction {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMetrics {
    pub cd_mm: f64,
    pub hd_mm: f64,
    pub cd_anterior: f64,
    pub cd_posterior: f64,
    pub hd_anterior: f64,
    pub hd_posterior: f64,
}

impl SurfaceMetrics {
    pub fn from_scores(cd: LeafletScores, hd: LeafletScores) -> Self {
        Self {
            cd_mm: cd.overall(),
            hd_mm: hd.overall(),
            cd_anterior: cd.anterior,
            cd_posterior: cd.posterior,
            hd_anterior: hd.anterior,
            hd_posterior: hd.posterior,
        }
    }
}

/// Distances from every grid point of `from` to the triangulated surface
/// of `to`, in grid order.
fn directed(from: &QuadMesh, to: &QuadMesh) -> Result<Vec<f64>> {
    let surface = triangulate(to)?;
    Ok(from
        .points()
        .iter()
        .map(|&p| point_surface_distance(p, &surface))
        .collect())
}

fn leaflet_chamfer(pred: &QuadMesh, gt: &QuadMesh) -> Result<f64> {
    let forward: f64 = directed(pred, gt)?.iter().sum();
    let backward: f64 = directed(gt, pred)?.iter().sum();
    let count = pred.points().len() + gt.points().len();
    Ok((forward + backward) / count as f64)
}

fn leaflet_hausdorff(pred: &QuadMesh, gt: &QuadMesh) -> Result<f64> {
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    Ok(0.5 * (max(directed(pred, gt)?) + max(directed(gt, pred)?)))
}

fn check_phases(pred: &[ValveMesh], gt: &[ValveMesh]) -> Result<()> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "phase count mismatch: {} predicted vs {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Chamfer distance averaged over the q phases, computed within each
/// leaflet: grid points of one mesh against the triangulated surface of the
/// other, both directions, normalised by the total grid-point count.
pub fn chamfer_distance(pred: &[ValveMesh], gt: &[ValveMesh]) -> Result<LeafletScores> {
    check_phases(pred, gt)?;
    let mut acc = [0.0; 2];
    for (p, g) in pred.iter().zip(gt) {
        for (slot, l) in acc.iter_mut().zip(Leaflet::ALL) {
            *slot += leaflet_chamfer(p.leaflet(l), g.leaflet(l))?;
        }
    }
    let q = pred.len() as f64;
    Ok(LeafletScores {
        anterior: acc[0] / q,
        posterior: acc[1] / q,
    })
}

/// Average of the two directed maximal point-to-surface distances, per
/// leaflet, for one phase.
pub fn hausdorff_distance(pred: &ValveMesh, gt: &ValveMesh) -> Result<LeafletScores> {
    Ok(LeafletScores {
        anterior: leaflet_hausdorff(&pred.anterior, &gt.anterior)?,
        posterior: leaflet_hausdorff(&pred.posterior, &gt.posterior)?,
    })
}

/// Per-patient metrics over all phases: CD uses the 1/q phase average, HD is
/// computed per phase and then reduced across phases.
pub fn surface_metrics(
    pred: &[ValveMesh],
    gt: &[ValveMesh],
    reduction: HdPhaseReduction,
) -> Result<SurfaceMetrics> {
    let cd = chamfer_distance(pred, gt)?;
    let per_phase = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| hausdorff_distance(p, g))
        .collect::<Result<Vec<_>>>()?;
    let reduce = |f: fn(&LeafletScores) -> f64| -> f64 {
        let vals = per_phase.iter().map(f);
        match reduction {
            HdPhaseReduction::Mean => vals.sum::<f64>() / per_phase.len() as f64,
            HdPhaseReduction::Max => vals.fold(0.0, f64::max),
        }
    };
    let hd = LeafletScores {
        anterior: reduce(|s| s.anterior),
        posterior: reduce(|s| s.posterior),
    };
    Ok(SurfaceMetrics::from_scores(cd, hd))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::wavy_valve;
    use super::*;
    use nalgebra::{Rotation3, Vector3};

    fn offset(v: &ValveMesh, d: Vector3<f64>) -> ValveMesh {
        v.map_points(|p| p + d).unwrap()
    }

    #[test]
    fn identity_is_zero() {
        let v = wavy_valve(0.8);
        let m = surface_metrics(&[v.clone()], &[v], HdPhaseReduction::Mean).unwrap();
        assert_eq!(m.cd_mm, 0.0);
        assert_eq!(m.hd_mm, 0.0);
    }

    #[test]
    fn flat_offset_gives_exact_half_millimetre() {
        let flat = wavy_valve(0.0);
        let moved = offset(&flat, Vector3::new(0.0, 0.0, 0.5));
        let cd = chamfer_distance(&[moved.clone()], &[flat.clone()]).unwrap();
        let hd = hausdorff_distance(&moved, &flat).unwrap();
        for v in [cd.anterior, cd.posterior, hd.anterior, hd.posterior] {
            assert!((v - 0.5).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn phase_mismatch_errors() {
        let v = wavy_valve(0.2);
        assert!(chamfer_distance(&[v.clone(), v.clone()], &[v.clone()]).is_err());
        assert!(chamfer_distance(&[], &[]).is_err());
    }

    #[test]
    fn symmetric_and_rigid_invariant() {
        let a = wavy_valve(0.8);
        let b = offset(&wavy_valve(1.3), Vector3::new(0.2, -0.4, 0.3));
        let ab = surface_metrics(&[a.clone()], &[b.clone()], HdPhaseReduction::Mean).unwrap();
        let ba = surface_metrics(&[b.clone()], &[a.clone()], HdPhaseReduction::Mean).unwrap();
        assert!((ab.cd_mm - ba.cd_mm).abs() < 1e-12);
        assert!((ab.hd_mm - ba.hd_mm).abs() < 1e-12);
        let rot = Rotation3::from_euler_angles(0.4, -1.1, 2.0);
        let t = Vector3::new(5.0, -3.0, 11.0);
        let move_it = |v: &ValveMesh| v.map_points(|p| rot * p + t).unwrap();
        let moved =
            surface_metrics(&[move_it(&a)], &[move_it(&b)], HdPhaseReduction::Mean).unwrap();
        assert!((moved.cd_mm - ab.cd_mm).abs() < 1e-9);
        assert!((moved.hd_mm - ab.hd_mm).abs() < 1e-9);
        assert!(ab.hd_anterior >= ab.cd_anterior && ab.hd_posterior >= ab.cd_posterior);
    }

    #[test]
    fn hd_phase_reduction_modes() {
        let a = wavy_valve(0.0);
        let near = offset(&a, Vector3::new(0.0, 0.0, 0.5));
        let far = offset(&a, Vector3::new(0.0, 0.0, 1.5));
        let gt = [a.clone(), a.clone()];
        let pred = [near, far];
        let mean = surface_metrics(&pred, &gt, HdPhaseReduction::Mean).unwrap();
        let max = surface_metrics(&pred, &gt, HdPhaseReduction::Max).unwrap();
        assert!((mean.hd_mm - 1.0).abs() < 1e-12);
        assert!((max.hd_mm - 1.5).abs() < 1e-12);
        assert!((mean.cd_mm - 1.0).abs() < 1e-12);
    }
}
