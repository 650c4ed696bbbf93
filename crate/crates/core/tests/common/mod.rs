//! Shared oracles for the integration tests.
#![allow(dead_code)]

pub mod gradsuite;
pub mod smoke;

use mitral::mesh::{Leaflet, QuadMesh, ValveMesh};
use mitral::nn::{Graph, Tensor, Var};
use nalgebra::{Rotation3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero, for kinked activations.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A shuffled ladder of well-separated values, so max pooling has no ties
/// within the finite-difference step.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub struct GradReport {
    pub checked: usize,
    /// Entries re-evaluated with the smaller step.
    pub retried: usize,
    pub max_rel_err: f64,
}

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Step multiplier for the retry near non-differentiable points.
pub const FD_RETRY_FACTOR: f64 = 1e-2;
/// Elementwise relative tolerance.
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding are compared absolutely.
pub const FD_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Checks d(loss)/d(input) for every element of every input, where the
/// loss is the mean squared difference between the op output and a fixed
/// random target. `build` maps the input vars to the op output.
pub fn check_op<F>(inputs: &[Tensor<f64>], seed: u64, build: F) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    check_op_sampled(inputs, seed, usize::MAX, build)
}

/// Same as [`check_op`] but verifies at most `per_input` elements of each
/// input, spread evenly.
pub fn check_op_sampled<F>(
    inputs: &[Tensor<f64>],
    seed: u64,
    per_input: usize,
    build: F,
) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut r = rng(seed);
    let target = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let y = build(&mut g, &vars);
        uniform(&mut r, g.shape(y), -1.0, 1.0)
    };
    check_scalar_sampled(inputs, per_input, |g, v| {
        let y = build(g, v);
        g.mse_loss(y, &target).unwrap()
    })
}

/// Checks the gradient of a scalar-valued graph built by `build`.
pub fn check_scalar_sampled<F>(inputs: &[Tensor<f64>], per_input: usize, build: F) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let loss_of = |ins: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = build(&mut g, &vars);
    assert_eq!(g.value(l).len(), 1, "loss must be scalar");
    let grads = g.backward(l).unwrap();

    let mut report = GradReport {
        checked: 0,
        retried: 0,
        max_rel_err: 0.0,
    };
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let n = inputs[k].len();
        let stride = (n / per_input.min(n)).max(1);
        for i in (0..n).step_by(stride) {
            let central = |h: f64| {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                (loss_of(&plus) - loss_of(&minus)) / (2.0 * h)
            };
            let mut numeric = central(FD_STEP);
            if rel_err(analytic[i], numeric) > FD_REL_TOL {
                // A max-pool selection can switch inside ±h; a genuine error
                // survives a smaller step, a kink does not.
                numeric = central(FD_STEP * FD_RETRY_FACTOR);
                report.retried += 1;
            }
            let e = rel_err(analytic[i], numeric);
            report.max_rel_err = report.max_rel_err.max(e);
            report.checked += 1;
        }
    }
    report
}

/// Random smooth quadmesh around `offset`, with per-point jitter.
pub fn random_leaflet(
    r: &mut ChaCha8Rng,
    leaflet: Leaflet,
    offset: Vector3<f64>,
    jitter: f64,
) -> QuadMesh {
    let (rows, cols) = leaflet.dims();
    let a = r.random_range(0.5..2.0);
    let f = r.random_range(0.1..0.4);
    let pts = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| {
            let x = i as f64 * 1.1;
            let y = j as f64 * 1.3;
            let z = a * (f * x).sin() * (f * y).cos();
            offset
                + Vector3::new(
                    x + r.random_range(-jitter..jitter),
                    y + r.random_range(-jitter..jitter),
                    z + r.random_range(-jitter..jitter),
                )
        })
        .collect::<Vec<_>>();
    QuadMesh::new(leaflet, rows, cols, pts).unwrap()
}

pub fn random_valve(r: &mut ChaCha8Rng, jitter: f64) -> ValveMesh {
    let rot = Rotation3::from_euler_angles(
        r.random_range(-0.5..0.5),
        r.random_range(-0.5..0.5),
        r.random_range(-3.0..3.0),
    );
    let shift = Vector3::new(
        r.random_range(-5.0..5.0),
        r.random_range(-5.0..5.0),
        r.random_range(-5.0..5.0),
    );
    let a = random_leaflet(r, Leaflet::Anterior, Vector3::new(-10.0, 0.0, 0.0), jitter);
    let p = random_leaflet(r, Leaflet::Posterior, Vector3::new(0.0, 12.0, 0.0), jitter);
    ValveMesh::new(a, p, 0)
        .unwrap()
        .map_points(|x| rot * x + shift)
        .unwrap()
}

/// Second, deliberately plain transcription of the point-to-triangle
/// distance: project onto the plane, test barycentric containment,
/// otherwise take the best of the three edge segments.
pub fn plain_point_triangle(
    p: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    c: Vector3<f64>,
) -> f64 {
    let seg = |p: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>| -> f64 {
        let d = v - u;
        let t = ((p - u).dot(&d) / d.dot(&d)).clamp(0.0, 1.0);
        (p - (u + d * t)).norm()
    };
    let n = (b - a).cross(&(c - a));
    let nn = n.dot(&n);
    if nn > 0.0 {
        let q = p - n * ((p - a).dot(&n) / nn);
        let w_a = (b - q).cross(&(c - q)).dot(&n) / nn;
        let w_b = (c - q).cross(&(a - q)).dot(&n) / nn;
        let w_c = 1.0 - w_a - w_b;
        if w_a >= 0.0 && w_b >= 0.0 && w_c >= 0.0 {
            return (p - q).norm();
        }
    }
    seg(p, a, b).min(seg(p, b, c)).min(seg(p, c, a))
}

/// Triangles of a quadmesh by the shorter-diagonal rule, as vertex triples.
pub fn plain_triangles(m: &QuadMesh) -> Vec<[Vector3<f64>; 3]> {
    let mut out = Vec::new();
    for r in 0..m.rows() - 1 {
        for c in 0..m.cols() - 1 {
            let (p00, p10, p01, p11) = (
                m.at(r, c),
                m.at(r + 1, c),
                m.at(r, c + 1),
                m.at(r + 1, c + 1),
            );
            if (p00 - p11).norm() <= (p10 - p01).norm() {
                out.push([p00, p10, p11]);
                out.push([p00, p11, p01]);
            } else {
                out.push([p00, p10, p01]);
                out.push([p10, p11, p01]);
            }
        }
    }
    out
}

pub fn plain_surface_distance(p: Vector3<f64>, tris: &[[Vector3<f64>; 3]]) -> f64 {
    tris.iter()
        .map(|t| plain_point_triangle(p, t[0], t[1], t[2]))
        .fold(f64::INFINITY, f64::min)
}

/// Chamfer distance per leaflet written out directly from its definition.
pub fn plain_chamfer(pred: &[ValveMesh], gt: &[ValveMesh]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (k, l) in Leaflet::ALL.into_iter().enumerate() {
        let mut total = 0.0;
        for (s, g) in pred.iter().zip(gt) {
            let (s, g) = (s.leaflet(l), g.leaflet(l));
            let (ts, tg) = (plain_triangles(s), plain_triangles(g));
            let mut sum = 0.0;
            for &p in s.points() {
                sum += plain_surface_distance(p, &tg);
            }
            for &p in g.points() {
                sum += plain_surface_distance(p, &ts);
            }
            total += sum / (s.points().len() + g.points().len()) as f64;
        }
        out[k] = total / pred.len() as f64;
    }
    out
}

/// Hausdorff distance per leaflet: half the sum of the directed maxima.
pub fn plain_hausdorff(pred: &ValveMesh, gt: &ValveMesh) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (k, l) in Leaflet::ALL.into_iter().enumerate() {
        let (s, g) = (pred.leaflet(l), gt.leaflet(l));
        let (ts, tg) = (plain_triangles(s), plain_triangles(g));
        let fwd = s
            .points()
            .iter()
            .map(|&p| plain_surface_distance(p, &tg))
            .fold(0.0, f64::max);
        let bwd = g
            .points()
            .iter()
            .map(|&p| plain_surface_distance(p, &ts))
            .fold(0.0, f64::max);
        out[k] = 0.5 * (fwd + bwd);
    }
    out
}

/// Approximates a leaflet surface by `n` area-weighted random samples.
pub fn sample_surface(r: &mut ChaCha8Rng, m: &QuadMesh, n: usize) -> Vec<Vector3<f64>> {
    let tris = plain_triangles(m);
    let areas: Vec<f64> = tris
        .iter()
        .map(|t| 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm())
        .collect();
    let total: f64 = areas.iter().sum();
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a / total;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = r.random();
            let k = cdf.partition_point(|&c| c < u).min(tris.len() - 1);
            let (mut s, mut t): (f64, f64) = (r.random(), r.random());
            if s + t > 1.0 {
                s = 1.0 - s;
                t = 1.0 - t;
            }
            let tr = tris[k];
            tr[0] + (tr[1] - tr[0]) * s + (tr[2] - tr[0]) * t
        })
        .collect()
}

/// Uniform grid of cells for nearest-neighbour queries over a point cloud.
pub struct PointGrid {
    cell: f64,
    origin: Vector3<f64>,
    dims: [usize; 3],
    cells: Vec<Vec<Vector3<f64>>>,
}

impl PointGrid {
    pub fn new(points: &[Vector3<f64>], cell: f64) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).floor() as usize) + 1);
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut g = Self {
            cell,
            origin: lo,
            dims,
            cells: Vec::new(),
        };
        for &p in points {
            let c = g.cell_of(p);
            cells[g.flat(c)].push(p);
        }
        g.cells = cells;
        g
    }

    fn cell_of(&self, p: Vector3<f64>) -> [isize; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell).floor() as isize)
    }

    fn flat(&self, c: [isize; 3]) -> usize {
        (c[0] as usize) + self.dims[0] * ((c[1] as usize) + self.dims[1] * c[2] as usize)
    }

    /// Exact nearest distance, searching outward in shells of cells.
    pub fn nearest(&self, p: Vector3<f64>) -> f64 {
        let c = self.cell_of(p);
        let mut best = f64::INFINITY;
        let max_r = self.dims.iter().max().copied().unwrap_or(1) as isize
            + 2
            + c.iter()
                .map(|v| v.unsigned_abs() as isize)
                .max()
                .unwrap_or(0);
        for rad in 0..=max_r {
            // points in shell `rad` are at least (rad - 1) cells away
            if best < (rad as f64 - 1.0) * self.cell {
                break;
            }
            for dz in -rad..=rad {
                for dy in -rad..=rad {
                    for dx in -rad..=rad {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != rad {
                            continue;
                        }
                        let q = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if (0..3).any(|a| q[a] < 0 || q[a] >= self.dims[a] as isize) {
                            continue;
                        }
                        for s in &self.cells[self.flat(q)] {
                            best = best.min((p - s).norm());
                        }
                    }
                }
            }
        }
        best
    }
}

/// Chamfer and Hausdorff per leaflet with each target surface replaced by
/// `n` random samples of it.
pub fn sampled_metrics(
    r: &mut ChaCha8Rng,
    pred: &ValveMesh,
    gt: &ValveMesh,
    n: usize,
) -> ([f64; 2], [f64; 2]) {
    let mut cd = [0.0; 2];
    let mut hd = [0.0; 2];
    for (k, l) in Leaflet::ALL.into_iter().enumerate() {
        let (s, g) = (pred.leaflet(l), gt.leaflet(l));
        let gs = PointGrid::new(&sample_surface(r, g, n), 0.5);
        let ss = PointGrid::new(&sample_surface(r, s, n), 0.5);
        let fwd: Vec<f64> = s.points().iter().map(|&p| gs.nearest(p)).collect();
        let bwd: Vec<f64> = g.points().iter().map(|&p| ss.nearest(p)).collect();
        cd[k] =
            (fwd.iter().sum::<f64>() + bwd.iter().sum::<f64>()) / (fwd.len() + bwd.len()) as f64;
        hd[k] = 0.5
            * (fwd.iter().cloned().fold(0.0, f64::max) + bwd.iter().cloned().fold(0.0, f64::max));
    }
    (cd, hd)
}
