//! 3D convolution as chunked im2col + GEMM.
//!
//! Activations are `[N, C, D, H, W]`, weights `[O, C, k, k, k]`. Work is
//! split into runs of output (or input, for the input gradient) depth
//! slices so the column buffer stays bounded.

use super::tensor::{gemm, MatRef, Real};
use crate::{Error, Result};

const COL_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// Stride 1 with padding that preserves spatial size (odd kernels).
    pub fn same(kernel: usize) -> Self {
        Self::new(kernel, 1, kernel / 2)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn out_size(&self, n: usize) -> Result<usize> {
        let padded = n + 2 * self.pad;
        if self.stride == 0 || padded < self.kernel {
            return Err(Error::Shape(format!(
                "window {} does not fit extent {n} with padding {}",
                self.kernel, self.pad
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn out_dims(&self, d: usize, h: usize, w: usize) -> Result<[usize; 3]> {
        Ok([self.out_size(d)?, self.out_size(h)?, self.out_size(w)?])
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShapes {
    pub n: usize,
    pub c: usize,
    pub o: usize,
    pub inp: [usize; 3],
    pub out: [usize; 3],
    pub geom: ConvGeom,
}

impl ConvShapes {
    pub fn new(x: [usize; 5], w: &[usize], geom: ConvGeom) -> Result<Self> {
        let k = geom.kernel;
        if w != [w[0], x[1], k, k, k] || w.len() != 5 {
            return Err(Error::Shape(format!(
                "weights {w:?} incompatible with input {x:?} and kernel {k}"
            )));
        }
        Ok(Self {
            n: x[0],
            c: x[1],
            o: w[0],
            inp: [x[2], x[3], x[4]],
            out: geom.out_dims(x[2], x[3], x[4])?,
            geom,
        })
    }

    fn in_plane(&self) -> usize {
        self.inp[1] * self.inp[2]
    }
    fn in_vol(&self) -> usize {
        self.inp[0] * self.in_plane()
    }
    fn out_plane(&self) -> usize {
        self.out[1] * self.out[2]
    }
    fn out_vol(&self) -> usize {
        self.out[0] * self.out_plane()
    }
    fn k3(&self) -> usize {
        self.geom.kernel.pow(3)
    }
}

fn slices_per_chunk(rows: usize, plane: usize, total: usize) -> usize {
    (COL_BUDGET / (rows * plane).max(1)).clamp(1, total.max(1))
}

/// Fills `col[(c,kz,ky,kx), (oz - z0, oy, ox)]` for output slices `z0..z1`.
fn im2col<T: Real>(x: &[T], s: &ConvShapes, z0: usize, z1: usize, col: &mut [T]) {
    let [d, h, w] = s.inp;
    let [_, ho, wo] = s.out;
    let k = s.geom.kernel;
    let st = s.geom.stride as isize;
    let pad = s.geom.pad as isize;
    let cols = (z1 - z0) * ho * wo;
    for c in 0..s.c {
        let xc = &x[c * s.in_vol()..(c + 1) * s.in_vol()];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + kz) * k + ky) * k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    let mut q = 0;
                    for oz in z0..z1 {
                        let iz = oz as isize * st + kz as isize - pad;
                        if iz < 0 || iz >= d as isize {
                            dst[q..q + ho * wo].fill(T::zero());
                            q += ho * wo;
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = oy as isize * st + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                dst[q..q + wo].fill(T::zero());
                                q += wo;
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            for ox in 0..wo {
                                let ix = ox as isize * st + kx as isize - pad;
                                dst[q] = if ix < 0 || ix >= w as isize {
                                    T::zero()
                                } else {
                                    xc[base + ix as usize]
                                };
                                q += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gathers `dy` into `col[(o,kz,ky,kx), (iz - z0, iy, ix)]`, the output
/// gradient each input voxel receives through each kernel tap.
fn gather_output_grad<T: Real>(dy: &[T], s: &ConvShapes, z0: usize, z1: usize, col: &mut [T]) {
    let [_, h, w] = s.inp;
    let [do_, ho, wo] = s.out;
    let k = s.geom.kernel;
    let st = s.geom.stride;
    let pad = s.geom.pad;
    let cols = (z1 - z0) * h * w;
    // Source output index along one axis for input index i and tap kk.
    let src = |i: usize, kk: usize, limit: usize| -> Option<usize> {
        let num = i + pad;
        if num < kk {
            return None;
        }
        let num = num - kk;
        if num % st != 0 || num / st >= limit {
            None
        } else {
            Some(num / st)
        }
    };
    for o in 0..s.o {
        let dyo = &dy[o * s.out_vol()..(o + 1) * s.out_vol()];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((o * k + kz) * k + ky) * k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    let mut q = 0;
                    for iz in z0..z1 {
                        let Some(oz) = src(iz, kz, do_) else {
                            dst[q..q + h * w].fill(T::zero());
                            q += h * w;
                            continue;
                        };
                        for iy in 0..h {
                            let Some(oy) = src(iy, ky, ho) else {
                                dst[q..q + w].fill(T::zero());
                                q += w;
                                continue;
                            };
                            let base = (oz * ho + oy) * wo;
                            for ix in 0..w {
                                dst[q] = match src(ix, kx, wo) {
                                    Some(ox) => dyo[base + ox],
                                    None => T::zero(),
                                };
                                q += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, s: &ConvShapes) -> Vec<T> {
    let out_vol = s.out_vol();
    let rows = s.c * s.k3();
    let mut y = vec![T::zero(); s.n * s.o * out_vol];
    let chunk = slices_per_chunk(rows, s.out_plane(), s.out[0]);
    let mut col = Vec::new();
    for n in 0..s.n {
        let xn = &x[n * s.c * s.in_vol()..(n + 1) * s.c * s.in_vol()];
        let y_off = n * s.o * out_vol;
        if s.geom.is_pointwise() {
            gemm(
                s.o,
                s.c,
                out_vol,
                T::one(),
                MatRef::new(w, 0, s.c, 1),
                MatRef::new(xn, 0, out_vol, 1),
                T::zero(),
                &mut y,
                y_off,
                out_vol,
                1,
            );
        } else {
            let mut z0 = 0;
            while z0 < s.out[0] {
                let z1 = (z0 + chunk).min(s.out[0]);
                let cols = (z1 - z0) * s.out_plane();
                col.resize(rows * cols, T::zero());
                im2col(xn, s, z0, z1, &mut col);
                gemm(
                    s.o,
                    rows,
                    cols,
                    T::one(),
                    MatRef::new(w, 0, rows, 1),
                    MatRef::new(&col, 0, cols, 1),
                    T::zero(),
                    &mut y,
                    y_off + z0 * s.out_plane(),
                    out_vol,
                    1,
                );
                z0 = z1;
            }
        }
        if let Some(b) = bias {
            for o in 0..s.o {
                let plane = &mut y[y_off + o * out_vol..y_off + (o + 1) * out_vol];
                plane.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    }
    y
}

/// Accumulates weight (and bias) gradients.
pub(crate) fn backward_weights<T: Real>(
    x: &[T],
    dy: &[T],
    s: &ConvShapes,
    dw: &mut [T],
    db: Option<&mut [T]>,
) {
    let out_vol = s.out_vol();
    let rows = s.c * s.k3();
    let chunk = slices_per_chunk(rows, s.out_plane(), s.out[0]);
    let mut col = Vec::new();
    for n in 0..s.n {
        let xn = &x[n * s.c * s.in_vol()..(n + 1) * s.c * s.in_vol()];
        let dyn_ = &dy[n * s.o * out_vol..(n + 1) * s.o * out_vol];
        if s.geom.is_pointwise() {
            gemm(
                s.o,
                out_vol,
                s.c,
                T::one(),
                MatRef::new(dyn_, 0, out_vol, 1),
                MatRef::new(xn, 0, 1, out_vol),
                T::one(),
                dw,
                0,
                s.c,
                1,
            );
            continue;
        }
        let mut z0 = 0;
        while z0 < s.out[0] {
            let z1 = (z0 + chunk).min(s.out[0]);
            let cols = (z1 - z0) * s.out_plane();
            col.resize(rows * cols, T::zero());
            im2col(xn, s, z0, z1, &mut col);
            gemm(
                s.o,
                cols,
                rows,
                T::one(),
                MatRef::new(dyn_, z0 * s.out_plane(), out_vol, 1),
                MatRef::new(&col, 0, 1, cols),
                T::one(),
                dw,
                0,
                rows,
                1,
            );
            z0 = z1;
        }
    }
    if let Some(db) = db {
        for n in 0..s.n {
            for (o, slot) in db.iter_mut().enumerate() {
                let off = (n * s.o + o) * out_vol;
                *slot += dy[off..off + out_vol].iter().copied().sum::<T>();
            }
        }
    }
}

/// Gradient with respect to the input.
pub(crate) fn backward_input<T: Real>(dy: &[T], w: &[T], s: &ConvShapes) -> Vec<T> {
    let in_vol = s.in_vol();
    let out_vol = s.out_vol();
    let k3 = s.k3();
    let mut dx = vec![T::zero(); s.n * s.c * in_vol];
    if s.geom.is_pointwise() {
        for n in 0..s.n {
            gemm(
                s.c,
                s.o,
                in_vol,
                T::one(),
                MatRef::new(w, 0, 1, s.c),
                MatRef::new(dy, n * s.o * out_vol, out_vol, 1),
                T::zero(),
                &mut dx,
                n * s.c * in_vol,
                in_vol,
                1,
            );
        }
        return dx;
    }
    // wt[c, (o, tap)] = w[o, c, tap]
    let rows = s.o * k3;
    let mut wt = vec![T::zero(); s.c * rows];
    for o in 0..s.o {
        for c in 0..s.c {
            for t in 0..k3 {
                wt[c * rows + o * k3 + t] = w[(o * s.c + c) * k3 + t];
            }
        }
    }
    let chunk = slices_per_chunk(rows, s.in_plane(), s.inp[0]);
    let mut col = Vec::new();
    for n in 0..s.n {
        let dyn_ = &dy[n * s.o * out_vol..(n + 1) * s.o * out_vol];
        let mut z0 = 0;
        while z0 < s.inp[0] {
            let z1 = (z0 + chunk).min(s.inp[0]);
            let cols = (z1 - z0) * s.in_plane();
            col.resize(rows * cols, T::zero());
            gather_output_grad(dyn_, s, z0, z1, &mut col);
            gemm(
                s.c,
                rows,
                cols,
                T::one(),
                MatRef::new(&wt, 0, rows, 1),
                MatRef::new(&col, 0, cols, 1),
                T::zero(),
                &mut dx,
                n * s.c * in_vol + z0 * s.in_plane(),
                in_vol,
                1,
            );
            z0 = z1;
        }
    }
    dx
}
