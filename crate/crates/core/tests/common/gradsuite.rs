//! Central finite-difference checks of every differentiable op in f64,
//! grouped by family. Each family returns one report per case.

use super::*;
use mitral::loss::TverskyParams;
use mitral::nn::{Bound, ConvGeom, DenseNet3DConfig, Graph, SkipMode, Tensor, UNet3DConfig, Var};

// (n, c, o, dims, kernel, stride, pad)
const CONV_CASES: [(usize, usize, usize, [usize; 3], usize, usize, usize); 6] = [
    (1, 1, 1, [3, 3, 3], 3, 1, 1),
    (2, 2, 3, [4, 3, 5], 3, 1, 1),
    (1, 3, 2, [5, 5, 5], 3, 2, 1),
    (1, 2, 2, [4, 4, 4], 1, 1, 0),
    (2, 1, 2, [7, 6, 6], 7, 2, 3),
    (1, 2, 1, [4, 5, 3], 2, 2, 0),
];

pub fn conv3d_all_inputs() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(1);
    for (i, &(n, c, o, d, k, s, p)) in CONV_CASES.iter().enumerate() {
        let x = uniform(&mut r, &[n, c, d[2], d[1], d[0]], -1.0, 1.0);
        let w = uniform(&mut r, &[o, c, k, k, k], -0.5, 0.5);
        let b = uniform(&mut r, &[o], -0.5, 0.5);
        let geom = ConvGeom::new(k, s, p);
        let rep = check_op_sampled(&[x, w, b], 100 + i as u64, 60, |g, v| {
            g.conv3d(v[0], v[1], Some(v[2]), geom).unwrap()
        });
        out.push((format!("conv case {i}"), rep));
    }
    out
}

pub fn conv3d_without_bias() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(2);
    let x = uniform(&mut r, &[1, 2, 3, 4, 3], -1.0, 1.0);
    let w = uniform(&mut r, &[2, 2, 3, 3, 3], -0.5, 0.5);
    let rep = check_op(&[x, w], 3, |g, v| {
        g.conv3d(v[0], v[1], None, ConvGeom::same(3)).unwrap()
    });
    out.push(("conv no bias".to_string(), rep));
    out
}

pub fn max_pool() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(4);
    // (shape, kernel, stride, pad)
    let cases: [(&[usize], usize, usize, usize); 5] = [
        (&[1, 1, 4, 4, 4], 2, 2, 0),
        (&[2, 2, 4, 6, 2], 2, 2, 0),
        (&[1, 2, 5, 5, 5], 3, 2, 1),
        (&[1, 1, 6, 4, 4], 3, 1, 1),
        (&[2, 1, 3, 3, 3], 2, 1, 0),
    ];
    for (i, (shape, k, s, p)) in cases.into_iter().enumerate() {
        let x = distinct(&mut r, shape);
        let rep = check_op(&[x], 10 + i as u64, |g, v| {
            g.max_pool3d(v[0], k, s, p).unwrap()
        });
        out.push((format!("maxpool case {i}"), rep));
    }
    out
}

pub fn avg_pool() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(5);
    let cases: [(&[usize], usize, usize); 5] = [
        (&[1, 1, 4, 4, 4], 2, 2),
        (&[2, 3, 2, 4, 6], 2, 2),
        (&[1, 1, 5, 5, 5], 3, 2),
        (&[1, 2, 3, 3, 3], 3, 1),
        (&[1, 1, 4, 2, 2], 1, 1),
    ];
    for (i, (shape, k, s)) in cases.into_iter().enumerate() {
        let x = uniform(&mut r, shape, -1.0, 1.0);
        let rep = check_op(&[x], 20 + i as u64, |g, v| {
            g.avg_pool3d(v[0], k, s).unwrap()
        });
        out.push((format!("avgpool case {i}"), rep));
    }
    out
}

pub fn upsample() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(6);
    for (i, shape) in [
        [1, 1, 1, 1, 1],
        [1, 2, 2, 2, 2],
        [2, 1, 3, 2, 1],
        [1, 3, 2, 3, 2],
        [2, 2, 1, 2, 3],
    ]
    .iter()
    .enumerate()
    {
        let x = uniform(&mut r, shape, -1.0, 1.0);
        let rep = check_op(&[x], 30 + i as u64, |g, v| g.upsample2(v[0]).unwrap());
        out.push((format!("upsample case {i}"), rep));
    }
    out
}

const SMALL_SHAPES: [&[usize]; 5] = [
    &[1, 1, 2, 2, 2],
    &[2, 3, 2, 2, 1],
    &[1, 4, 3, 1, 2],
    &[3, 2, 1, 2, 2],
    &[1, 3, 3, 3, 3],
];

pub fn relu() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(7);
    for (i, s) in SMALL_SHAPES.iter().enumerate() {
        let x = away_from_zero(&mut r, s);
        out.push((
            format!("relu {i}"),
            check_op(&[x], 40 + i as u64, |g, v| g.relu(v[0])),
        ));
    }
    out
}

pub fn mish() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(8);
    for (i, s) in SMALL_SHAPES.iter().enumerate() {
        let x = uniform(&mut r, s, -4.0, 4.0);
        out.push((
            format!("mish {i}"),
            check_op(&[x], 50 + i as u64, |g, v| g.mish(v[0])),
        ));
    }
    out
}

pub fn softmax() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(9);
    for (i, s) in SMALL_SHAPES.iter().enumerate() {
        let x = uniform(&mut r, s, -3.0, 3.0);
        let rep = check_op(&[x], 60 + i as u64, |g, v| {
            g.softmax_channels(v[0]).unwrap()
        });
        out.push((format!("softmax {i}"), rep));
    }
    out
}

pub fn concat_and_add() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(10);
    for (i, s) in SMALL_SHAPES.iter().enumerate() {
        let a = uniform(&mut r, s, -1.0, 1.0);
        let mut s2 = s.to_vec();
        s2[1] += 1;
        let b = uniform(&mut r, &s2, -1.0, 1.0);
        let c = uniform(&mut r, s, -1.0, 1.0);
        let rep = check_op(&[a, b, c], 70 + i as u64, |g, v| {
            let sum = g.add(v[0], v[2]).unwrap();
            g.concat_channels(&[sum, v[1], v[0]]).unwrap()
        });
        out.push((format!("concat/add {i}"), rep));
    }
    out
}

pub fn channel_norm() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(11);
    for (i, s) in SMALL_SHAPES.iter().enumerate() {
        let x = uniform(&mut r, s, -2.0, 2.0);
        let gamma = uniform(&mut r, &[s[1]], 0.5, 1.5);
        let beta = uniform(&mut r, &[s[1]], -0.5, 0.5);
        let rep = check_op(&[x, gamma, beta], 80 + i as u64, |g, v| {
            g.channel_norm(v[0], v[1], v[2]).unwrap()
        });
        out.push((format!("channel norm {i}"), rep));
    }
    out
}

pub fn global_pool_and_fc() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(12);
    for (i, s) in SMALL_SHAPES.iter().enumerate() {
        let x = uniform(&mut r, s, -1.0, 1.0);
        let o = 2 + i;
        let w = uniform(&mut r, &[o, s[1]], -1.0, 1.0);
        let b = uniform(&mut r, &[o], -1.0, 1.0);
        let rep = check_op(&[x, w, b], 90 + i as u64, |g, v| {
            let p = g.global_avg_pool(v[0]).unwrap();
            g.linear(p, v[1], v[2]).unwrap()
        });
        out.push((format!("gap+fc {i}"), rep));
    }
    out
}

pub fn scale_sum_weighted_sum() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(13);
    for (i, s) in SMALL_SHAPES.iter().enumerate() {
        let a = uniform(&mut r, s, -1.0, 1.0);
        let b = uniform(&mut r, s, -1.0, 1.0);
        let rep = check_scalar_sampled(&[a, b], usize::MAX, |g, v| {
            let w = g.weighted_sum(&[(v[0], 0.3), (v[1], -1.7)]).unwrap();
            let sq = g.mish(w);
            let t = g.sum(sq);
            g.scale(t, 0.25)
        });
        out.push((format!("reductions {i}"), rep));
    }
    out
}

/// Two dense layers with bottleneck, normalisation and Mish, concatenated
/// onto the block input.
fn dense_block(g: &mut Graph<f64>, v: &[Var]) -> Var {
    let mut feats = vec![v[0]];
    for l in 0..2 {
        let p = &v[1 + 6 * l..7 + 6 * l];
        let x = g.concat_channels(&feats).unwrap();
        let x = g.channel_norm(x, p[0], p[1]).unwrap();
        let x = g.conv3d(x, p[2], None, ConvGeom::same(1)).unwrap();
        let x = g.mish(x);
        let x = g.channel_norm(x, p[3], p[4]).unwrap();
        let x = g.conv3d(x, p[5], None, ConvGeom::same(3)).unwrap();
        feats.push(g.mish(x));
    }
    g.concat_channels(&feats).unwrap()
}

pub fn dense_block_composite() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let (k, bn) = (2, 2);
    let mut r = rng(14);
    for (i, dims) in [[2, 2, 2], [3, 2, 2], [2, 3, 3], [3, 3, 3], [4, 2, 3]]
        .iter()
        .enumerate()
    {
        let c0 = 1 + i % 2;
        let mut inputs = vec![uniform(
            &mut r,
            &[1, c0, dims[2], dims[1], dims[0]],
            -1.0,
            1.0,
        )];
        for l in 0..2 {
            let c = c0 + l * k;
            inputs.push(uniform(&mut r, &[c], 0.5, 1.5));
            inputs.push(uniform(&mut r, &[c], -0.5, 0.5));
            inputs.push(uniform(&mut r, &[bn * k, c, 1, 1, 1], -0.8, 0.8));
            inputs.push(uniform(&mut r, &[bn * k], 0.5, 1.5));
            inputs.push(uniform(&mut r, &[bn * k], -0.5, 0.5));
            inputs.push(uniform(&mut r, &[k, bn * k, 3, 3, 3], -0.4, 0.4));
        }
        let rep = check_op_sampled(&inputs, 110 + i as u64, 12, dense_block);
        out.push((format!("dense block {i}"), rep));
    }
    out
}

fn one_hot_target(r: &mut rand_chacha::ChaCha8Rng, n: usize, dims: [usize; 3]) -> Tensor<f64> {
    use rand::RngExt;
    let v = dims[0] * dims[1] * dims[2];
    let mut data = vec![0.0; n * 3 * v];
    for b in 0..n {
        for i in 0..v {
            let c = r.random_range(0..3usize);
            data[(b * 3 + c) * v + i] = 1.0;
        }
    }
    Tensor::new(vec![n, 3, dims[2], dims[1], dims[0]], data).unwrap()
}

pub fn tversky_through_softmax() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(15);
    let params = TverskyParams::default();
    for (i, &(n, dims)) in [
        (1, [2, 2, 2]),
        (2, [3, 2, 1]),
        (1, [4, 3, 2]),
        (3, [2, 2, 2]),
        (2, [1, 1, 5]),
    ]
    .iter()
    .enumerate()
    {
        let target = one_hot_target(&mut r, n, dims);
        let logits = uniform(&mut r, target.shape(), -2.0, 2.0);
        let rep = check_scalar_sampled(&[logits], usize::MAX, |g, v| {
            let p = g.softmax_channels(v[0]).unwrap();
            g.tversky_loss(p, &target, &params).unwrap()
        });
        out.push((format!("tversky {i}"), rep));
    }
    out
}

pub fn tversky_on_raw_probabilities_with_custom_weights() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(16);
    let params = TverskyParams {
        alpha: [0.5, 0.2, 0.9],
        beta: [0.5, 0.8, 0.1],
        class_weights: [0.2, 0.3, 0.5],
        epsilon: 1e-3,
    };
    for i in 0..5 {
        let target = one_hot_target(&mut r, 1 + i % 2, [2, 3, 1 + i]);
        let probs = uniform(&mut r, target.shape(), 0.05, 0.95);
        let rep = check_scalar_sampled(&[probs], usize::MAX, |g, v| {
            g.tversky_loss(v[0], &target, &params).unwrap()
        });
        out.push((format!("tversky raw {i}"), rep));
    }
    out
}

pub fn mse() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(17);
    for (i, s) in [&[3usize][..], &[2, 5], &[1, 7], &[4, 4], &[1, 1188]]
        .iter()
        .enumerate()
    {
        let pred = uniform(&mut r, s, -1.0, 1.0);
        let target = uniform(&mut r, s, -1.0, 1.0);
        let rep = check_scalar_sampled(&[pred], 200, |g, v| g.mse_loss(v[0], &target).unwrap());
        out.push((format!("mse {i}"), rep));
    }
    out
}

pub fn tiny_unet_end_to_end() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(18);
    for (i, (levels, base, skip, dims)) in [
        (2, 2, SkipMode::Concat, [4, 4, 4]),
        (2, 1, SkipMode::Add, [4, 2, 6]),
        (3, 1, SkipMode::Concat, [4, 4, 8]),
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = UNet3DConfig {
            levels,
            base_channels: base,
            skip,
            ..Default::default()
        };
        let params = cfg.init_params::<f64>(i as u64).unwrap();
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        let target = one_hot_target(&mut r, 1, dims);
        let x = uniform(&mut r, &[1, 1, dims[2], dims[1], dims[0]], -1.0, 1.0);
        let mut inputs = vec![x];
        inputs.extend(params.iter().map(|(_, t)| t.clone()));
        let rep = check_scalar_sampled(&inputs, 6, |g, v| {
            let bound = Bound::from_vars(names.iter().cloned().zip(v[1..].iter().copied()));
            let p = cfg.forward(g, &bound, v[0]).unwrap();
            g.tversky_loss(p, &target, &Default::default()).unwrap()
        });
        out.push((format!("unet {i}"), rep));
    }
    out
}

pub fn tiny_densenet_end_to_end() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let cfg = DenseNet3DConfig {
        in_channels: 1,
        growth_rate: 2,
        block_sizes: vec![1, 1, 1, 1],
        bn_size: 1,
        ..Default::default()
    };
    let params = cfg.init_params::<f64>(3).unwrap();
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut r = rng(19);
    let x = uniform(&mut r, &[1, 1, 64, 64, 64], -1.0, 1.0);
    let target = uniform(&mut r, &[1, 1188], -0.3, 0.3);
    let mut inputs = vec![x];
    inputs.extend(params.iter().map(|(_, t)| t.clone()));
    let rep = check_scalar_sampled(&inputs, 3, |g, v| {
        let bound = Bound::from_vars(names.iter().cloned().zip(v[1..].iter().copied()));
        let (y, _) = cfg.forward(g, &bound, v[0]).unwrap();
        g.mse_loss(y, &target).unwrap()
    });
    out.push(("densenet".to_string(), rep));
    out
}

/// Every family, in a fixed order.
pub fn families() -> Vec<(&'static str, fn() -> Vec<(String, GradReport)>)> {
    vec![
        (
            "conv3d_all_inputs",
            conv3d_all_inputs as fn() -> Vec<(String, GradReport)>,
        ),
        (
            "conv3d_without_bias",
            conv3d_without_bias as fn() -> Vec<(String, GradReport)>,
        ),
        ("max_pool", max_pool as fn() -> Vec<(String, GradReport)>),
        ("avg_pool", avg_pool as fn() -> Vec<(String, GradReport)>),
        ("upsample", upsample as fn() -> Vec<(String, GradReport)>),
        ("relu", relu as fn() -> Vec<(String, GradReport)>),
        ("mish", mish as fn() -> Vec<(String, GradReport)>),
        ("softmax", softmax as fn() -> Vec<(String, GradReport)>),
        (
            "concat_and_add",
            concat_and_add as fn() -> Vec<(String, GradReport)>,
        ),
        (
            "channel_norm",
            channel_norm as fn() -> Vec<(String, GradReport)>,
        ),
        (
            "global_pool_and_fc",
            global_pool_and_fc as fn() -> Vec<(String, GradReport)>,
        ),
        (
            "scale_sum_weighted_sum",
            scale_sum_weighted_sum as fn() -> Vec<(String, GradReport)>,
        ),
        (
            "dense_block_composite",
            dense_block_composite as fn() -> Vec<(String, GradReport)>,
        ),
        (
            "tversky_through_softmax",
            tversky_through_softmax as fn() -> Vec<(String, GradReport)>,
        ),
        (
            "tversky_on_raw_probabilities_with_custom_weights",
            tversky_on_raw_probabilities_with_custom_weights as fn() -> Vec<(String, GradReport)>,
        ),
        ("mse", mse as fn() -> Vec<(String, GradReport)>),
        (
            "tiny_unet_end_to_end",
            tiny_unet_end_to_end as fn() -> Vec<(String, GradReport)>,
        ),
        (
            "tiny_densenet_end_to_end",
            tiny_densenet_end_to_end as fn() -> Vec<(String, GradReport)>,
        ),
    ]
}
