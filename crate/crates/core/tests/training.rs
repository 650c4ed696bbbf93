mod common;

use common::smoke::*;
use mitral::pipeline::{shape_samples, PipelineConfig};
use mitral::train::{
    load_model, shape_predict, train_shape, unet_predict, ShapeSample, TrainConfig,
};

fn shape_set(root: &std::path::Path) -> (PipelineConfig, Vec<ShapeSample>) {
    let (cfg, phase) = one_phantom(root);
    let mut cfg2 = cfg.clone();
    cfg2.augmentations = 3;
    let samples = shape_samples(&cfg2, &[phase], true, None).unwrap();
    (cfg, samples)
}

#[test]
fn unet_overfits_one_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let o = overfit_unet(dir.path());
    let (first, last, ok) = overfit_summary(&o);
    assert!(ok, "loss {first} -> {last}");
}

#[test]
fn shape_net_overfits_one_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let o = overfit_shape(dir.path());
    let (first, last, ok) = overfit_summary(&o);
    assert!(ok, "loss {first} -> {last}");
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, samples) = shape_set(dir.path());
    let (train, val) = samples.split_at(2);
    let hyper = TrainConfig {
        lr: 2e-3,
        epochs: 4,
        batch_size: 1,
        patience: 1,
        ..Default::default()
    };
    let full = train_shape(
        &cfg.shape,
        train,
        val,
        &hyper,
        Some(&dir.path().join("full")),
    )
    .unwrap();

    let part = dir.path().join("part");
    let first = TrainConfig {
        epochs: 2,
        ..hyper.clone()
    };
    train_shape(&cfg.shape, train, val, &first, Some(&part)).unwrap();
    let resumed = TrainConfig {
        resume: true,
        ..hyper.clone()
    };
    let rest = train_shape(&cfg.shape, train, val, &resumed, Some(&part)).unwrap();

    assert_eq!(rest.history.len(), 4);
    for (a, b) in full.history.iter().zip(&rest.history) {
        assert!((a.val_loss - b.val_loss).abs() < 1e-6);
        assert_eq!(a.lr, b.lr);
    }
    assert_eq!(full.best_epoch, rest.best_epoch);
    let log_a = std::fs::read(dir.path().join("full/log.csv")).unwrap();
    let log_b = std::fs::read(part.join("log.csv")).unwrap();
    assert_eq!(log_a, log_b);
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, samples) = shape_set(dir.path());
    let hyper = smoke_hyper(2e-3, 2);
    for run in ["a", "b"] {
        train_shape(
            &cfg.shape,
            &samples,
            &[],
            &hyper,
            Some(&dir.path().join(run)),
        )
        .unwrap();
    }
    for f in ["log.csv", "best.ckpt", "last.ckpt"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn checkpoint_round_trip_gives_identical_inference() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, samples) = shape_set(dir.path());
    let out = dir.path().join("run");
    let o = train_shape(&cfg.shape, &samples, &[], &smoke_hyper(2e-3, 2), Some(&out)).unwrap();
    let (kind, conf, params) = load_model(out.join("best.ckpt")).unwrap();
    assert_eq!(kind, "densenet");
    assert_eq!(conf, serde_json::to_value(&cfg.shape).unwrap());
    let s = &samples[0];
    let a = shape_predict(&cfg.shape, &o.best, &s.input, s.dims).unwrap();
    let b = shape_predict(&cfg.shape, &params, &s.input, s.dims).unwrap();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn unet_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, phase) = one_phantom(dir.path());
    let samples = mitral::pipeline::seg_samples(&cfg, &[phase], false).unwrap();
    let out = dir.path().join("u");
    let o = mitral::train::train_unet(&cfg.unet, &samples, &[], &smoke_hyper(1e-3, 1), Some(&out))
        .unwrap();
    let (u, params) = mitral::pipeline::load_unet(&out.join("best.ckpt")).unwrap();
    assert_eq!(u, cfg.unet);
    let a = unet_predict(&u, &o.best, &samples[0].image, [cfg.crop_dim; 3]).unwrap();
    let b = unet_predict(&u, &params, &samples[0].image, [cfg.crop_dim; 3]).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        mitral::pipeline::load_shape(&out.join("best.ckpt")),
        Err(mitral::Error::Config(_))
    ));
}

#[test]
fn map_flag_sets_shape_channels() {
    let mut cfg = PipelineConfig::default();
    assert_eq!(cfg.shape.in_channels, 3);
    cfg.validate().unwrap();
    cfg.with_maps = false;
    assert!(cfg.validate().is_err());
    cfg.shape.in_channels = mitral::pipeline::shape_channels(false);
    assert_eq!(cfg.shape.in_channels, 1);
    cfg.validate().unwrap();
}
