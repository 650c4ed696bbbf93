//! Parametric valve phantom: an elliptic saddle annulus with two hinged,
//! billowing leaflets inside a bright ventricular wall, imaged as a noisy
//! CT-like volume over a cardiac cycle.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mesh::{
    rasterize_mesh, save_mesh, LabelMask, Leaflet, QuadMesh, ValveMesh, DEFAULT_THICKNESS_MM,
};
use crate::volume::{save_landmarks, save_volume, CropFrame, LandmarkSet, Volume};
use crate::{Error, Result};

/// Source grid: voxels per axis.
pub const SOURCE_DIM: usize = 64;
/// Source grid spacing in mm.
pub const SOURCE_SPACING: f64 = 1.5;

pub const MIN_PHASES: usize = 4;
pub const MAX_PHASES: usize = 20;

const BACKGROUND_HU: f64 = 80.0;
const BACKGROUND_SWING_HU: f64 = 40.0;
const LEAFLET_HU: f64 = 270.0;
const WALL_HU: f64 = 380.0;
const WALL_HALF_THICKNESS: f64 = 1.5;
/// Leaflet angle below the annulus plane when closed (radians).
const CLOSED_ANGLE: f64 = 0.3;
/// Angular gap left at each commissure between the two leaflets.
const COMMISSURE_GAP: f64 = 0.05;
/// Share of the annulus taken by the anterior leaflet.
const ANTERIOR_ARC_FRACTION: f64 = 0.4;
const PROLAPSE_MM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// Annulus ellipse semi-axes (mm), along and across the
    /// anterior–posterior direction.
    pub annulus_radii: [f64; 2],
    /// Saddle elevation amplitude (mm).
    pub saddle_height: f64,
    /// Anterior and posterior leaflet lengths (mm).
    pub leaflet_lengths: [f64; 2],
    /// Gap between the posterior annulus and the wall (mm).
    pub wall_distance: f64,
    pub phases: usize,
    /// Standard deviation of the additive noise (HU).
    pub noise_sigma: f64,
    /// Peak opening angle over the cycle (radians).
    pub max_opening: f64,
    pub mr_like: bool,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            annulus_radii: [18.0, 16.0],
            saddle_height: 3.0,
            leaflet_lengths: [15.0, 11.0],
            wall_distance: 3.0,
            phases: 10,
            noise_sigma: 20.0,
            max_opening: 0.9,
            mr_like: false,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self
            .annulus_radii
            .iter()
            .chain(&self.leaflet_lengths)
            .all(|&v| positive(v))
        {
            return Err(Error::InvalidArgument(
                "phantom radii and leaflet lengths must be positive".into(),
            ));
        }
        if !(MIN_PHASES..=MAX_PHASES).contains(&self.phases) {
            return Err(Error::InvalidArgument(format!(
                "phase count {} outside [{MIN_PHASES}, {MAX_PHASES}]",
                self.phases
            )));
        }
        if !(self.wall_distance >= 0.0)
            || !(self.noise_sigma >= 0.0)
            || !self.saddle_height.is_finite()
        {
            return Err(Error::InvalidArgument(
                "wall distance and noise must be non-negative".into(),
            ));
        }
        if !(0.0..=PI / 2.0 - CLOSED_ANGLE).contains(&self.max_opening) {
            return Err(Error::InvalidArgument(format!(
                "opening angle {} out of range",
                self.max_opening
            )));
        }
        Ok(())
    }

    /// Rigid placement of the valve in the scanner frame, drawn from the seed.
    pub fn pose(&self) -> (Rotation3<f64>, Vector3<f64>) {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(1);
        let rot = Rotation3::from_euler_angles(
            r.random_range(-0.4..0.4),
            r.random_range(-0.4..0.4),
            r.random_range(-PI..PI),
        );
        let shift = Vector3::new(
            r.random_range(-4.0..4.0),
            r.random_range(-4.0..4.0),
            r.random_range(-4.0..4.0),
        );
        (rot, shift)
    }

    fn to_world(&self, p: Vector3<f64>) -> Vector3<f64> {
        let (rot, shift) = self.pose();
        rot * p + shift
    }

    fn annulus(&self, theta: f64) -> Vector3<f64> {
        let [a, b] = self.annulus_radii;
        Vector3::new(
            a * theta.cos(),
            b * theta.sin(),
            self.saddle_height * (2.0 * theta).cos(),
        )
    }

    /// Annulus angle span `(start, end)` of a leaflet, increasing.
    fn arc(l: Leaflet) -> (f64, f64) {
        let half = PI * ANTERIOR_ARC_FRACTION;
        match l {
            Leaflet::Anterior => (PI - half + COMMISSURE_GAP, PI + half - COMMISSURE_GAP),
            Leaflet::Posterior => (PI + half + COMMISSURE_GAP, 3.0 * PI - half - COMMISSURE_GAP),
        }
    }

    /// Opening angle added to the closed pose at cycle fraction `t`.
    pub fn opening(&self, t: f64) -> f64 {
        self.max_opening * (1.0 - (2.0 * PI * t).cos()) / 2.0
    }

    fn leaflet_local(&self, l: Leaflet, t: f64) -> Vec<Vector3<f64>> {
        let (rows, cols) = l.dims();
        let (t0, t1) = Self::arc(l);
        let length = self.leaflet_lengths[l as usize];
        let open = self.opening(t);
        let psi = CLOSED_ANGLE + open;
        let closed_share = 1.0 - open / self.max_opening.max(1e-12);
        let mut pts = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let u = r as f64 / (rows - 1) as f64;
            let theta = t0 + (t1 - t0) * u;
            let base = self.annulus(theta);
            let inward = Vector3::new(-base.x, -base.y, 0.0).normalize();
            let dir = inward * psi.cos() - Vector3::z() * psi.sin();
            // shorter near the commissures
            let reach = length * (0.35 + 0.65 * (PI * u).sin());
            for c in 0..cols {
                let s = c as f64 / (cols - 1) as f64;
                let billow = 0.12 * reach * (PI * s).sin() * (0.4 + 0.6 * closed_share);
                let mut p = base + dir * (reach * s) + Vector3::z() * billow;
                if self.mr_like && l == Leaflet::Posterior {
                    let bump = (-((u - 0.5) / 0.2).powi(2)).exp();
                    p += Vector3::z() * (PROLAPSE_MM * s * s * bump);
                }
                pts.push(p);
            }
        }
        pts
    }

    fn landmarks_local(&self) -> [Vector3<f64>; 4] {
        let (a0, a1) = Self::arc(Leaflet::Anterior);
        let n = 360;
        let centroid = (0..n)
            .map(|k| self.annulus(2.0 * PI * k as f64 / n as f64))
            .sum::<Vector3<f64>>()
            / n as f64;
        [
            self.annulus(a0),
            self.annulus(a1),
            self.annulus(0.0),
            centroid,
        ]
    }

    /// Signed distance proxy to the wall ellipsoid, negative inside.
    fn wall_offset(&self, p: Vector3<f64>) -> f64 {
        let [a, b] = self.annulus_radii;
        let back = 8.0;
        let centre = Vector3::new(-back, 0.0, self.saddle_height);
        let axes = Vector3::new(
            a + self.wall_distance + back,
            b + self.wall_distance + 6.0,
            26.0,
        );
        let q = p - centre;
        let rho = q.component_div(&axes).norm();
        if rho == 0.0 {
            return -axes.min();
        }
        q.norm() * (1.0 - 1.0 / rho)
    }
}

/// The valve at cycle fraction `t` in scanner coordinates.
pub fn generate_valve_mesh(spec: &PhantomSpec, t: f64) -> Result<ValveMesh> {
    spec.validate()?;
    let leaflet = |l: Leaflet| {
        let (rows, cols) = l.dims();
        let pts = spec
            .leaflet_local(l, t)
            .into_iter()
            .map(|p| spec.to_world(p))
            .collect();
        QuadMesh::new(l, rows, cols, pts)
    };
    ValveMesh::new(leaflet(Leaflet::Anterior)?, leaflet(Leaflet::Posterior)?, 0)
}

pub fn phantom_landmarks(spec: &PhantomSpec) -> LandmarkSet {
    let [ta, tb, opp, c] = spec.landmarks_local().map(|p| spec.to_world(p));
    LandmarkSet {
        trigone_a: ta,
        trigone_b: tb,
        opposing_annulus: opp,
        annulus_centroid: c,
    }
}

/// The source volume grid expressed as a crop frame, so meshes can be
/// rasterised straight onto it.
pub fn source_frame() -> CropFrame {
    let half = (SOURCE_DIM / 2) as f64 * SOURCE_SPACING;
    let origin = -((SOURCE_DIM - 1) as f64) * SOURCE_SPACING / 2.0;
    CropFrame {
        center: Vector3::repeat(origin + half),
        axes: Matrix3::identity(),
        scale: SOURCE_SPACING,
        out_dims: [SOURCE_DIM; 3],
    }
}

fn source_origin() -> [f64; 3] {
    [-((SOURCE_DIM - 1) as f64) * SOURCE_SPACING / 2.0; 3]
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub id: String,
    pub spec: PhantomSpec,
    pub volumes: Vec<Volume>,
    pub meshes: Vec<ValveMesh>,
    /// Ground-truth labels on each source volume's grid.
    pub masks: Vec<LabelMask>,
    pub landmarks: LandmarkSet,
    pub is_mr_like: bool,
}

fn static_anatomy(spec: &PhantomSpec) -> Vec<f64> {
    let (rot, shift) = spec.pose();
    let inv = rot.inverse();
    let frame = source_frame();
    let n = SOURCE_DIM;
    let mut out = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let w = frame.voxel_to_world(Vector3::new(i as f64, j as f64, k as f64));
                let bg = BACKGROUND_HU
                    + BACKGROUND_SWING_HU
                        * (w.x / 17.0).sin()
                        * (w.y / 23.0).cos()
                        * (w.z / 19.0 + 1.0).sin();
                let local = inv * (w - shift);
                let wall = if spec.wall_offset(local).abs() <= WALL_HALF_THICKNESS {
                    WALL_HU
                } else {
                    0.0
                };
                out.push(bg + wall);
            }
        }
    }
    out
}

fn phase_volume(
    spec: &PhantomSpec,
    anatomy: &[f64],
    mask: &LabelMask,
    phase: usize,
) -> Result<Volume> {
    let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
    r.set_stream(100 + phase as u64);
    let noise =
        Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let data = anatomy
        .iter()
        .zip(mask.labels())
        .map(|(&base, &label)| {
            let sheet = if label == LabelMask::BACKGROUND {
                0.0
            } else {
                LEAFLET_HU
            };
            (base + sheet + noise.sample(&mut r)) as f32
        })
        .collect();
    Volume::new([SOURCE_DIM; 3], [SOURCE_SPACING; 3], source_origin(), data)
}

/// All phases of one patient.
pub fn generate_case(spec: &PhantomSpec) -> Result<PhantomCase> {
    generate_named_case("phantom", spec)
}

pub fn generate_named_case(id: &str, spec: &PhantomSpec) -> Result<PhantomCase> {
    spec.validate()?;
    let frame = source_frame();
    let anatomy = static_anatomy(spec);
    let q = spec.phases;
    let mut case = PhantomCase {
        id: id.to_string(),
        spec: *spec,
        volumes: Vec::with_capacity(q),
        meshes: Vec::with_capacity(q),
        masks: Vec::with_capacity(q),
        landmarks: phantom_landmarks(spec),
        is_mr_like: spec.mr_like,
    };
    for k in 0..q {
        let mut mesh = generate_valve_mesh(spec, k as f64 / q as f64)?;
        mesh.phase_index = k;
        let mask = rasterize_mesh(&mesh, &frame, DEFAULT_THICKNESS_MM)?;
        case.volumes.push(phase_volume(spec, &anatomy, &mask, k)?);
        case.meshes.push(mesh);
        case.masks.push(mask);
    }
    Ok(case)
}

/// Patient id for the `i`-th generated case.
pub fn patient_id(i: usize) -> String {
    format!("p{i:03}")
}

/// Randomised specs for a cohort; `ceil(mr_fraction · n)` of them are
/// MR-like. Each spec carries its own derived seed, so any case can be
/// regenerated on its own.
pub fn dataset_specs(n: usize, mr_fraction: f64, seed: u64) -> Result<Vec<(String, PhantomSpec)>> {
    if !(0.0..=1.0).contains(&mr_fraction) {
        return Err(Error::InvalidArgument(format!(
            "mr_fraction {mr_fraction} outside [0, 1]"
        )));
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n_mr = ((mr_fraction * n as f64).ceil() as usize).min(n);
    let mut flags: Vec<bool> = (0..n).map(|i| i < n_mr).collect();
    flags.shuffle(&mut r);
    Ok(flags
        .into_iter()
        .enumerate()
        .map(|(i, mr_like)| {
            let a = r.random_range(16.0..20.0);
            let spec = PhantomSpec {
                annulus_radii: [a, r.random_range(15.0..a)],
                saddle_height: r.random_range(2.0..5.0),
                leaflet_lengths: [r.random_range(13.0..18.0), r.random_range(9.0..13.0)],
                wall_distance: r.random_range(1.0..6.0),
                phases: r.random_range(MIN_PHASES..=MAX_PHASES),
                noise_sigma: r.random_range(10.0..30.0),
                max_opening: r.random_range(0.6..1.0),
                mr_like,
                seed: r.next_u64(),
            };
            (patient_id(i), spec)
        })
        .collect())
}

pub fn generate_dataset(n: usize, mr_fraction: f64, seed: u64) -> Result<Vec<PhantomCase>> {
    dataset_specs(n, mr_fraction, seed)?
        .iter()
        .map(|(id, s)| generate_named_case(id, s))
        .collect()
}

/// Per-patient manifest written next to the phase files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub id: String,
    pub phases: usize,
    pub is_mr_like: bool,
    pub spec: PhantomSpec,
    pub volumes: Vec<String>,
    pub meshes: Vec<String>,
    pub landmarks: String,
}

/// Cohort manifest at the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub mr_fraction: f64,
    pub cases: Vec<CaseEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub phases: usize,
    pub stratum: String,
}

pub fn stratum_name(mr_like: bool) -> &'static str {
    if mr_like {
        "mr"
    } else {
        "normal"
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::format("manifest", e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `dir/<id>/` with one `.vol` and `.mesh.json` per phase, the
/// landmarks and `case.json`.
pub fn write_case(root: impl AsRef<Path>, case: &PhantomCase) -> Result<CaseManifest> {
    let dir = root.as_ref().join(&case.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut m = CaseManifest {
        id: case.id.clone(),
        phases: case.volumes.len(),
        is_mr_like: case.is_mr_like,
        spec: case.spec,
        volumes: Vec::new(),
        meshes: Vec::new(),
        landmarks: "landmarks.json".into(),
    };
    for (k, (v, mesh)) in case.volumes.iter().zip(&case.meshes).enumerate() {
        let vname = format!("phase_{k:02}.vol");
        let mname = format!("phase_{k:02}.mesh.json");
        save_volume(dir.join(&vname), v)?;
        save_mesh(dir.join(&mname), mesh)?;
        m.volumes.push(vname);
        m.meshes.push(mname);
    }
    save_landmarks(dir.join(&m.landmarks), &case.landmarks)?;
    write_json(&dir.join("case.json"), &m)?;
    Ok(m)
}

/// Generates and writes a cohort one case at a time.
pub fn write_dataset(
    root: impl AsRef<Path>,
    n: usize,
    mr_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    let root = root.as_ref();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = DatasetManifest {
        seed,
        mr_fraction,
        cases: Vec::with_capacity(n),
    };
    for (id, spec) in dataset_specs(n, mr_fraction, seed)? {
        let case = generate_named_case(&id, &spec)?;
        let m = write_case(root, &case)?;
        manifest.cases.push(CaseEntry {
            id,
            phases: m.phases,
            stratum: stratum_name(case.is_mr_like).into(),
        });
    }
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset_manifest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = root.as_ref().join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("dataset manifest", e))
}

pub fn read_case_manifest(case_dir: impl AsRef<Path>) -> Result<CaseManifest> {
    let path = case_dir.as_ref().join("case.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("case manifest", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::point_surface_distance;
    use crate::mesh::triangulate;
    use crate::volume::{build_crop_frame, crop_oriented, load_volume};

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            phases: 4,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn grid_dims_and_cycle() {
        let s = PhantomSpec::default();
        let m0 = generate_valve_mesh(&s, 0.0).unwrap();
        assert_eq!((m0.anterior.rows(), m0.anterior.cols()), (19, 9));
        assert_eq!((m0.posterior.rows(), m0.posterior.cols()), (25, 9));
        let m1 = generate_valve_mesh(&s, 1.0 - 1e-12).unwrap();
        let drift = m0
            .all_points()
            .zip(m1.all_points())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "{drift}");
    }

    #[test]
    fn adjacent_phases_move_less_than_a_quarter_leaflet() {
        for q in [8, 12, 20] {
            let s = PhantomSpec {
                phases: q,
                max_opening: 1.0,
                ..Default::default()
            };
            let meshes: Vec<ValveMesh> = (0..q)
                .map(|k| generate_valve_mesh(&s, k as f64 / q as f64).unwrap())
                .collect();
            for k in 0..q {
                let (a, b) = (&meshes[k], &meshes[(k + 1) % q]);
                for l in Leaflet::ALL {
                    let (pa, pb) = (a.leaflet(l).points(), b.leaflet(l).points());
                    let mean = pa.iter().zip(pb).map(|(x, y)| (x - y).norm()).sum::<f64>()
                        / pa.len() as f64;
                    assert!(
                        mean < s.leaflet_lengths[l as usize] / 4.0,
                        "q {q} phase {k}: {mean}"
                    );
                }
            }
        }
    }

    #[test]
    fn prolapse_only_moves_posterior() {
        let s = PhantomSpec::default();
        let mr = PhantomSpec { mr_like: true, ..s };
        let (a, b) = (
            generate_valve_mesh(&s, 0.0).unwrap(),
            generate_valve_mesh(&mr, 0.0).unwrap(),
        );
        assert_eq!(a.anterior, b.anterior);
        assert_ne!(a.posterior, b.posterior);
    }

    #[test]
    fn case_is_deterministic_and_consistent() {
        let s = small_spec();
        let c = generate_case(&s).unwrap();
        let d = generate_case(&s).unwrap();
        assert_eq!(c.volumes, d.volumes);
        assert_eq!(c.masks, d.masks);
        assert_eq!(c.volumes.len(), 4);
        assert_eq!(c.meshes.len(), 4);
        assert_eq!(c.masks.len(), 4);
        assert_eq!(c.volumes[0].dims(), [64, 64, 64]);
        for (k, m) in c.meshes.iter().enumerate() {
            assert_eq!(m.phase_index, k);
        }
        let other = generate_case(&PhantomSpec { seed: 4, ..s }).unwrap();
        assert_ne!(c.volumes[0], other.volumes[0]);
    }

    #[test]
    fn landmarks_sit_on_the_annulus() {
        let s = PhantomSpec::default();
        let lm = phantom_landmarks(&s);
        let (rot, shift) = s.pose();
        let to_local = |p: Vector3<f64>| rot.inverse() * (p - shift);
        for p in [lm.trigone_a, lm.trigone_b, lm.opposing_annulus] {
            let l = to_local(p);
            let [a, b] = s.annulus_radii;
            let ell = (l.x / a).powi(2) + (l.y / b).powi(2);
            assert!((ell - 1.0).abs() < 1e-9);
            let theta = (l.y / b).atan2(l.x / a);
            assert!((l.z - s.saddle_height * (2.0 * theta).cos()).abs() < 1e-9);
        }
        // the trigones are the ends of the anterior annulus row
        let m = generate_valve_mesh(&s, 0.3).unwrap();
        assert!((m.anterior.at(0, 0) - lm.trigone_a).norm() < 1e-9);
        assert!((m.anterior.at(18, 0) - lm.trigone_b).norm() < 1e-9);
    }

    #[test]
    fn landmarks_fit_the_crop() {
        for seed in 0..50 {
            let (_, s) = dataset_specs(1, 0.0, seed).unwrap().remove(0);
            let lm = phantom_landmarks(&s);
            let f = build_crop_frame(&lm, 1.5, [64; 3]).unwrap();
            for p in lm.points() {
                let v = f.world_to_voxel(p);
                assert!(
                    v.iter().all(|&c| (8.0..=56.0).contains(&c)),
                    "{seed}: {v:?}"
                );
            }
        }
    }

    #[test]
    fn crop_class_balance_and_contrast() {
        let s = small_spec();
        let case = generate_case(&s).unwrap();
        let frame = build_crop_frame(&case.landmarks, 1.5, [64; 3]).unwrap();
        for mesh in &case.meshes {
            let mask = rasterize_mesh(mesh, &frame, DEFAULT_THICKNESS_MM).unwrap();
            let fg = mask.count(LabelMask::ANTERIOR) + mask.count(LabelMask::POSTERIOR);
            let frac = fg as f64 / mask.labels().len() as f64;
            assert!(frac > 0.002 && frac < 0.02, "{frac}");
        }
        let crop = crop_oriented(&case.volumes[0], &frame).unwrap();
        let mask = rasterize_mesh(&case.meshes[0], &frame, DEFAULT_THICKNESS_MM).unwrap();
        let (mut sheet, mut ns, mut bg, mut nb) = (0.0, 0, 0.0, 0);
        for (&v, &l) in crop.data().iter().zip(mask.labels()) {
            if l == LabelMask::BACKGROUND {
                bg += v as f64;
                nb += 1;
            } else {
                sheet += v as f64;
                ns += 1;
            }
        }
        assert!(sheet / ns as f64 > bg / nb as f64 + 3.0 * s.noise_sigma);
    }

    #[test]
    fn mask_voxels_hug_the_surface() {
        let case = generate_case(&small_spec()).unwrap();
        let frame = source_frame();
        let tris = triangulate(&case.meshes[1].anterior).unwrap();
        let mask = &case.masks[1];
        let [nx, ny, _] = mask.dims();
        for (i, &l) in mask.labels().iter().enumerate() {
            if l == LabelMask::ANTERIOR {
                let p = Vector3::new(
                    (i % nx) as f64,
                    ((i / nx) % ny) as f64,
                    (i / (nx * ny)) as f64,
                );
                let d = point_surface_distance(frame.voxel_to_world(p), &tris);
                assert!(d <= DEFAULT_THICKNESS_MM / 2.0 + 1e-9);
            }
        }
        assert!(mask.count(LabelMask::ANTERIOR) > 0);
    }

    #[test]
    fn source_frame_matches_volume_grid() {
        let case = generate_case(&small_spec()).unwrap();
        let f = source_frame();
        let v = &case.volumes[0];
        for p in [Vector3::zeros(), Vector3::new(5.0, 17.0, 63.0)] {
            assert!((f.voxel_to_world(p) - v.voxel_to_world(p)).norm() < 1e-12);
        }
    }

    #[test]
    fn cohort_flags_and_diversity() {
        let specs = dataset_specs(10, 0.3, 5).unwrap();
        assert_eq!(specs.iter().filter(|(_, s)| s.mr_like).count(), 3);
        let mut qs: Vec<usize> = specs.iter().map(|(_, s)| s.phases).collect();
        qs.sort_unstable();
        qs.dedup();
        assert!(qs.len() >= 2);
        for (_, s) in &specs {
            s.validate().unwrap();
            assert!(s.annulus_radii.iter().all(|r| (15.0..=20.0).contains(r)));
        }
        assert_eq!(dataset_specs(10, 0.3, 5).unwrap(), specs);
        assert_eq!(
            dataset_specs(7, 0.01, 5)
                .unwrap()
                .iter()
                .filter(|(_, s)| s.mr_like)
                .count(),
            1
        );
    }

    #[test]
    fn wall_sits_behind_the_posterior_annulus() {
        let s = PhantomSpec::default();
        let p = s.annulus(0.0);
        let out = Vector3::new(s.wall_distance, 0.0, 0.0);
        assert!(s.wall_offset(p) < 0.0);
        assert!(s.wall_offset(p + out).abs() < 1e-9);
    }

    #[test]
    fn spec_validation() {
        let ok = PhantomSpec::default();
        assert!(ok.validate().is_ok());
        assert!(PhantomSpec { phases: 3, ..ok }.validate().is_err());
        assert!(PhantomSpec { phases: 21, ..ok }.validate().is_err());
        assert!(PhantomSpec {
            annulus_radii: [0.0, 1.0],
            ..ok
        }
        .validate()
        .is_err());
        assert!(PhantomSpec {
            wall_distance: -1.0,
            ..ok
        }
        .validate()
        .is_err());
    }

    #[test]
    fn written_case_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let case = generate_named_case("p000", &small_spec()).unwrap();
        let m = write_case(dir.path(), &case).unwrap();
        assert_eq!(read_case_manifest(dir.path().join("p000")).unwrap(), m);
        let v = load_volume(dir.path().join("p000").join(&m.volumes[2])).unwrap();
        assert_eq!(v, case.volumes[2]);
        let mesh = crate::mesh::load_mesh(dir.path().join("p000").join(&m.meshes[2])).unwrap();
        assert_eq!(mesh, case.meshes[2]);
    }
}
