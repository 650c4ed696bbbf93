use nalgebra::{Rotation3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Volume;
use crate::mesh::ValveMesh;
use crate::{Error, Result};

/// Number of variants produced per source image.
pub const AUGMENTATION_COUNT: usize = 22;

/// One augmentation draw.
///
/// `rotation` holds Euler angles (radians) about x, y and z; the rotation
/// matrix is `Rz · Ry · Rx`. Rotation and scaling pivot on
/// [`Volume::center`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub value_shift: f64,
    pub rotation: [f64; 3],
    pub scale: f64,
    pub smooth_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            value_shift: 0.0,
            rotation: [0.0; 3],
            scale: 1.0,
            smooth_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=2.0).contains(&self.scale) {
            return Err(Error::InvalidArgument(format!(
                "augmentation scale {} outside [0.5, 2]",
                self.scale
            )));
        }
        if !(0.0..=4.0).contains(&self.smooth_sigma) {
            return Err(Error::InvalidArgument(format!(
                "smoothing sigma {} outside [0, 4]",
                self.smooth_sigma
            )));
        }
        if !self.value_shift.is_finite() || self.rotation.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument(
                "augmentation parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        let [rx, ry, rz] = self.rotation;
        Rotation3::from_euler_angles(rx, ry, rz)
    }

    fn is_rigid_identity(&self) -> bool {
        self.rotation == [0.0; 3] && self.scale == 1.0
    }

    /// Maps a world point the way the volume content moves.
    pub fn transform_point(&self, p: Vector3<f64>, pivot: Vector3<f64>) -> Vector3<f64> {
        pivot + self.rotation_matrix() * (p - pivot) * self.scale
    }
}

/// Applies one augmentation to a volume and the meshes that annotate it.
///
/// Rotation and scaling act on both consistently; smoothing and the value
/// shift (followed by re-clamping into `[0, 1]`) touch the volume only.
pub fn augment(
    v: &Volume,
    meshes: &[ValveMesh],
    spec: &AugmentSpec,
) -> Result<(Volume, Vec<ValveMesh>)> {
    spec.validate()?;
    let pivot = v.center();
    let mut out = v.clone();
    let mut out_meshes = meshes.to_vec();

    if !spec.is_rigid_identity() {
        let rot = spec.rotation_matrix();
        let inv = rot.inverse();
        let [nx, ny, nz] = v.dims();
        let mut data = Vec::with_capacity(v.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let w = v.voxel_to_world(Vector3::new(i as f64, j as f64, k as f64));
                    let src = pivot + inv * (w - pivot) / spec.scale;
                    data.push(v.sample_world(src) as f32);
                }
            }
        }
        out = v.with_data(data)?;
        out_meshes = meshes
            .iter()
            .map(|m| m.map_points(|p| spec.transform_point(p, pivot)))
            .collect::<Result<_>>()?;
    }

    if spec.smooth_sigma > 0.0 {
        out = gaussian_smooth(&out, spec.smooth_sigma)?;
    }

    if spec.value_shift != 0.0 {
        let shift = spec.value_shift;
        let data = out
            .data()
            .iter()
            .map(|&x| (x as f64 + shift).clamp(0.0, 1.0) as f32)
            .collect();
        out = out.with_data(data)?;
    }
    Ok((out, out_meshes))
}

/// Separable Gaussian blur (σ in voxels, kernel truncated at 3σ, edges
/// clamped).
fn gaussian_smooth(v: &Volume, sigma: f64) -> Result<Volume> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);

    let dims = v.dims();
    let mut cur: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis] as i64;
        let stride = strides[axis];
        let mut next = vec![0.0; cur.len()];
        for (idx, slot) in next.iter_mut().enumerate() {
            let pos = ((idx / stride) % dims[axis]) as i64;
            let line_start = idx - pos as usize * stride;
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let q = (pos + t as i64 - radius).clamp(0, n - 1) as usize;
                acc += w * cur[line_start + q * stride];
            }
            *slot = acc;
        }
        cur = next;
    }
    v.with_data(cur.into_iter().map(|x| x as f32).collect())
}

/// The fixed 22-variant grid: identity, four value shifts, twelve
/// single-axis rotations, two scalings, two smoothings and one seeded
/// combined jitter.
pub fn augmentation_grid(base_seed: u64) -> Vec<AugmentSpec> {
    let id = AugmentSpec::identity();
    let mut specs = vec![id];
    for shift in [-0.10, -0.05, 0.05, 0.10] {
        specs.push(AugmentSpec {
            value_shift: shift,
            ..id
        });
    }
    for axis in 0..3 {
        for deg in [-10.0f64, -5.0, 5.0, 10.0] {
            let mut rotation = [0.0; 3];
            rotation[axis] = deg.to_radians();
            specs.push(AugmentSpec { rotation, ..id });
        }
    }
    for scale in [0.9, 1.1] {
        specs.push(AugmentSpec { scale, ..id });
    }
    for smooth_sigma in [1.0, 2.0] {
        specs.push(AugmentSpec { smooth_sigma, ..id });
    }
    let jitter_seed = base_seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed);
    let ten = 10f64.to_radians();
    specs.push(AugmentSpec {
        value_shift: rng.random_range(-0.1..=0.1),
        rotation: [
            rng.random_range(-ten..=ten),
            rng.random_range(-ten..=ten),
            rng.random_range(-ten..=ten),
        ],
        scale: rng.random_range(0.9..=1.1),
        smooth_sigma: rng.random_range(0.0..=1.0),
        seed: jitter_seed,
    });
    for (i, s) in specs.iter_mut().enumerate().take(AUGMENTATION_COUNT - 1) {
        s.seed = base_seed.wrapping_add(i as u64);
    }
    debug_assert_eq!(specs.len(), AUGMENTATION_COUNT);
    specs
}

/// Produces the 22 augmented copies of one image and its meshes; the first
/// entry is the untouched input.
pub fn make_augmentation_batch(
    v: &Volume,
    meshes: &[ValveMesh],
    base_seed: u64,
) -> Result<Vec<(Volume, Vec<ValveMesh>)>> {
    augmentation_grid(base_seed)
        .iter()
        .map(|spec| augment(v, meshes, spec))
        .collect()
}
