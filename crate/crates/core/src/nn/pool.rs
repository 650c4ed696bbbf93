//! Pooling and nearest-neighbour upsampling on `[N, C, D, H, W]` buffers.

use super::conv::ConvGeom;
use super::tensor::Real;
use crate::Result;

/// Max pooling; padded positions never win. Returns the pooled values and,
/// per output element, the flat input index of the first maximum.
pub(crate) fn max_pool<T: Real>(
    x: &[T],
    dims: [usize; 5],
    g: ConvGeom,
) -> Result<(Vec<T>, Vec<u32>, [usize; 5])> {
    let [n, c, d, h, w] = dims;
    let [od, oh, ow] = g.out_dims(d, h, w)?;
    let k = g.kernel;
    let mut y = Vec::with_capacity(n * c * od * oh * ow);
    let mut arg = Vec::with_capacity(y.capacity());
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = u32::MAX;
                    for kz in 0..k {
                        let iz = (oz * g.stride + kz) as isize - g.pad as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for ky in 0..k {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let i = base + (iz as usize * h + iy as usize) * w + ix as usize;
                                if best_i == u32::MAX || x[i] > best {
                                    best = x[i];
                                    best_i = i as u32;
                                }
                            }
                        }
                    }
                    y.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    Ok((y, arg, [n, c, od, oh, ow]))
}

pub(crate) fn max_pool_backward<T: Real>(dy: &[T], arg: &[u32], in_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); in_len];
    for (&g, &i) in dy.iter().zip(arg) {
        dx[i as usize] += g;
    }
    dx
}

/// Unpadded average pooling with a cubic window.
pub(crate) fn avg_pool<T: Real>(
    x: &[T],
    dims: [usize; 5],
    k: usize,
    stride: usize,
) -> Result<(Vec<T>, [usize; 5])> {
    let [n, c, d, h, w] = dims;
    let g = ConvGeom::new(k, stride, 0);
    let [od, oh, ow] = g.out_dims(d, h, w)?;
    let inv = T::one() / T::lit((k * k * k) as f64);
    let mut y = Vec::with_capacity(n * c * od * oh * ow);
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = T::zero();
                    for kz in 0..k {
                        for ky in 0..k {
                            let row = base
                                + ((oz * stride + kz) * h + oy * stride + ky) * w
                                + ox * stride;
                            for kx in 0..k {
                                s += x[row + kx];
                            }
                        }
                    }
                    y.push(s * inv);
                }
            }
        }
    }
    Ok((y, [n, c, od, oh, ow]))
}

pub(crate) fn avg_pool_backward<T: Real>(
    dy: &[T],
    in_dims: [usize; 5],
    k: usize,
    stride: usize,
) -> Vec<T> {
    let [n, c, d, h, w] = in_dims;
    let od = (d - k) / stride + 1;
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let inv = T::one() / T::lit((k * k * k) as f64);
    let mut dx = vec![T::zero(); n * c * d * h * w];
    let mut q = 0;
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy[q] * inv;
                    q += 1;
                    for kz in 0..k {
                        for ky in 0..k {
                            let row = base
                                + ((oz * stride + kz) * h + oy * stride + ky) * w
                                + ox * stride;
                            for kx in 0..k {
                                dx[row + kx] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Repeats every voxel into a 2×2×2 block.
pub(crate) fn upsample2<T: Real>(x: &[T], dims: [usize; 5]) -> (Vec<T>, [usize; 5]) {
    let [n, c, d, h, w] = dims;
    let (d2, h2, w2) = (2 * d, 2 * h, 2 * w);
    let mut y = vec![T::zero(); n * c * d2 * h2 * w2];
    for nc in 0..n * c {
        let src = &x[nc * d * h * w..(nc + 1) * d * h * w];
        let dst = &mut y[nc * d2 * h2 * w2..(nc + 1) * d2 * h2 * w2];
        for z in 0..d2 {
            for yy in 0..h2 {
                let srow = ((z / 2) * h + yy / 2) * w;
                let drow = (z * h2 + yy) * w2;
                for xx in 0..w2 {
                    dst[drow + xx] = src[srow + xx / 2];
                }
            }
        }
    }
    (y, [n, c, d2, h2, w2])
}

/// Sums each 2×2×2 block of the upsampled gradient.
pub(crate) fn upsample2_backward<T: Real>(dy: &[T], in_dims: [usize; 5]) -> Vec<T> {
    let [n, c, d, h, w] = in_dims;
    let (h2, w2) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); n * c * d * h * w];
    for nc in 0..n * c {
        let src = &dy[nc * 8 * d * h * w..(nc + 1) * 8 * d * h * w];
        let dst = &mut dx[nc * d * h * w..(nc + 1) * d * h * w];
        for z in 0..2 * d {
            for yy in 0..h2 {
                let srow = (z * h2 + yy) * w2;
                let drow = ((z / 2) * h + yy / 2) * w;
                for xx in 0..w2 {
                    dst[drow + xx / 2] += src[srow + xx];
                }
            }
        }
    }
    dx
}
