//! Small end-to-end training runs on a single phantom.

use std::path::Path;

use mitral::nn::{DenseNet3DConfig, UNet3DConfig};
use mitral::pipeline::{
    cmd_generate, list_patients, prepare_patient, seg_samples, shape_samples, PipelineConfig,
    PreparedPhase,
};
use mitral::train::{train_shape, train_unet, SegSample, ShapeSample, TrainConfig, TrainOutcome};

pub const SMOKE_EPOCHS: usize = 30;
pub const SMOKE_COPIES: usize = 10;

pub fn tiny_unet() -> UNet3DConfig {
    UNet3DConfig {
        base_channels: 8,
        levels: 2,
        ..Default::default()
    }
}

pub fn tiny_densenet(in_channels: usize) -> DenseNet3DConfig {
    DenseNet3DConfig {
        in_channels,
        growth_rate: 4,
        block_sizes: vec![1, 1, 1, 1],
        bn_size: 2,
        ..Default::default()
    }
}

/// Pipeline settings for a dataset under `root`, sized for quick tests.
pub fn tiny_pipeline(root: &Path) -> PipelineConfig {
    PipelineConfig {
        data_root: root.join("data"),
        out_dir: root.join("out"),
        folds: 3,
        crop_dim: 32,
        phases_per_patient: Some(1),
        augmentations: 1,
        with_maps: false,
        unet: tiny_unet(),
        shape: tiny_densenet(1),
        ..Default::default()
    }
}

/// One prepared phase of a freshly generated single-patient dataset.
pub fn one_phantom(root: &Path) -> (PipelineConfig, PreparedPhase) {
    let cfg = tiny_pipeline(root);
    cmd_generate(1, 0.0, 11, &cfg.data_root).unwrap();
    let (_, patients) = list_patients(&cfg.data_root).unwrap();
    let phase = prepare_patient(&cfg, &patients[0]).unwrap().remove(0);
    (cfg, phase)
}

pub fn smoke_hyper(lr: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        lr,
        epochs,
        batch_size: 1,
        patience: epochs + 1,
        ..Default::default()
    }
}

pub fn overfit_unet(root: &Path) -> TrainOutcome {
    let (cfg, phase) = one_phantom(root);
    let one: Vec<SegSample> = seg_samples(&cfg, &[phase], false).unwrap();
    let samples: Vec<SegSample> = one.iter().cycle().take(SMOKE_COPIES).cloned().collect();
    train_unet(
        &cfg.unet,
        &samples,
        &[],
        &smoke_hyper(3e-2, SMOKE_EPOCHS),
        None,
    )
    .unwrap()
}

pub fn overfit_shape(root: &Path) -> TrainOutcome {
    let (cfg, phase) = one_phantom(root);
    let one: Vec<ShapeSample> = shape_samples(&cfg, &[phase], false, None).unwrap();
    let samples: Vec<ShapeSample> = one.iter().cycle().take(SMOKE_COPIES).cloned().collect();
    train_shape(
        &cfg.shape,
        &samples,
        &[],
        &smoke_hyper(5e-3, SMOKE_EPOCHS),
        None,
    )
    .unwrap()
}

/// First and last epoch training loss, and whether the run counts as overfitting:
/// strictly falling over the first five epochs and ending below half the start.
pub fn overfit_summary(o: &TrainOutcome) -> (f64, f64, bool) {
    let loss: Vec<f64> = o.history.iter().map(|r| r.train_loss).collect();
    let (first, last) = (loss[0], *loss.last().unwrap());
    let falling = loss.len() >= 5 && loss[..5].windows(2).all(|w| w[1] < w[0]);
    (first, last, falling && last < 0.5 * first)
}
