//! Epoch loops for both networks, with resumable on-disk state.
//!
//! An output directory holds `last.ckpt` (weights, Adam moments and
//! schedule state), `best.ckpt` (weights with the lowest monitored loss)
//! and `log.csv`. Batch order in epoch `e` depends only on the seed and `e`,
//! so a resumed run replays exactly what an uninterrupted one would do.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::adam::{adam_step, AdamState};
use super::schedule::PlateauSchedule;
use crate::loss::TverskyParams;
use crate::mesh::LabelMask;
use crate::nn::{
    Bound, Checkpoint, DenseNet3DConfig, Graph, ParamStore, Tensor, UNet3DConfig, Var, OUTPUT_DIM,
};
use crate::{Error, Result};

/// Which loss drives the plateau schedule and best-checkpoint selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlateauMetric {
    #[default]
    Validation,
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub patience: usize,
    pub factor: f64,
    pub plateau_metric: PlateauMetric,
    /// Training stops once lr falls below `lr · min_lr_ratio`.
    pub min_lr_ratio: f64,
    pub tversky: TverskyParams,
    /// Continue from `last.ckpt` in the output directory when present.
    pub resume: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            epochs: 100,
            batch_size: 2,
            seed: 0,
            patience: 5,
            factor: 0.1,
            plateau_metric: PlateauMetric::Validation,
            min_lr_ratio: 1e-3,
            tversky: TverskyParams::default(),
            resume: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for the shape regressor.
    pub fn shape_default() -> Self {
        Self {
            lr: 2e-3,
            batch_size: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "lr, batch_size and epochs must be positive".into(),
            ));
        }
        PlateauSchedule::new(self.patience, self.factor)?;
        self.tversky
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ParamStore<f32>,
    pub last: ParamStore<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// A cropped image with its voxel labels.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub image: Vec<f32>,
    pub mask: LabelMask,
}

/// A multi-channel crop with its regression target.
#[derive(Debug, Clone)]
pub struct ShapeSample {
    pub input: Vec<f32>,
    pub channels: usize,
    pub dims: [usize; 3],
    pub target: Vec<f32>,
}

fn nchw(b: usize, c: usize, dims: [usize; 3]) -> Vec<usize> {
    vec![b, c, dims[2], dims[1], dims[0]]
}

fn seg_batch(g: &mut Graph<f32>, samples: &[&SegSample]) -> Result<(Var, Tensor<f32>)> {
    let dims = samples[0].mask.dims();
    let mut img = Vec::new();
    let mut tgt = Vec::new();
    for s in samples {
        if s.mask.dims() != dims || s.image.len() != s.mask.labels().len() {
            return Err(Error::Shape("segmentation batch has mixed sizes".into()));
        }
        img.extend_from_slice(&s.image);
        tgt.extend(s.mask.one_hot());
    }
    let b = samples.len();
    let x = g.input(Tensor::new(nchw(b, 1, dims), img)?);
    Ok((x, Tensor::new(nchw(b, 3, dims), tgt)?))
}

fn shape_batch(g: &mut Graph<f32>, samples: &[&ShapeSample]) -> Result<(Var, Tensor<f32>)> {
    let (c, dims) = (samples[0].channels, samples[0].dims);
    let mut inp = Vec::new();
    let mut tgt = Vec::new();
    for s in samples {
        if s.channels != c || s.dims != dims || s.target.len() != OUTPUT_DIM {
            return Err(Error::Shape("shape batch has mixed sizes".into()));
        }
        inp.extend_from_slice(&s.input);
        tgt.extend_from_slice(&s.target);
    }
    let b = samples.len();
    let x = g.input(Tensor::new(nchw(b, c, dims), inp)?);
    Ok((x, Tensor::new(vec![b, OUTPUT_DIM], tgt)?))
}

/// Per-voxel class probabilities, channel-major `3 × voxels`.
pub fn unet_predict(
    cfg: &UNet3DConfig,
    params: &ParamStore<f32>,
    image: &[f32],
    dims: [usize; 3],
) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let x = g.input(Tensor::new(nchw(1, cfg.in_channels, dims), image.to_vec())?);
    let y = cfg.forward(&mut g, &b, x)?;
    Ok(g.value(y).data().to_vec())
}

/// Regressed 1188-vector for one multi-channel crop.
pub fn shape_predict(
    cfg: &DenseNet3DConfig,
    params: &ParamStore<f32>,
    input: &[f32],
    dims: [usize; 3],
) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let x = g.input(Tensor::new(nchw(1, cfg.in_channels, dims), input.to_vec())?);
    let (y, _) = cfg.forward(&mut g, &b, x)?;
    Ok(g.value(y).data().to_vec())
}

pub fn train_unet(
    cfg: &UNet3DConfig,
    train: &[SegSample],
    val: &[SegSample],
    hyper: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    if cfg.in_channels != 1 || cfg.out_channels != 3 {
        return Err(Error::Config(
            "U-Net training needs 1 input and 3 output channels".into(),
        ));
    }
    let init = cfg.init_params::<f32>(hyper.seed)?;
    let meta = json!({"kind": "unet", "config": cfg});
    fit(
        init,
        meta,
        train.len(),
        val.len(),
        hyper,
        out,
        |g, b, idx, is_val| {
            let pool = if is_val { val } else { train };
            let batch: Vec<&SegSample> = idx.iter().map(|&i| &pool[i]).collect();
            let (x, target) = seg_batch(g, &batch)?;
            let probs = cfg.forward(g, b, x)?;
            g.tversky_loss(probs, &target, &hyper.tversky)
        },
    )
}

pub fn train_shape(
    cfg: &DenseNet3DConfig,
    train: &[ShapeSample],
    val: &[ShapeSample],
    hyper: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    if let Some(s) = train.first() {
        if s.channels != cfg.in_channels {
            return Err(Error::Config(format!(
                "samples have {} channels but the network expects {}",
                s.channels, cfg.in_channels
            )));
        }
    }
    let init = cfg.init_params::<f32>(hyper.seed)?;
    let meta = json!({"kind": "densenet", "config": cfg});
    fit(
        init,
        meta,
        train.len(),
        val.len(),
        hyper,
        out,
        |g, b, idx, is_val| {
            let pool = if is_val { val } else { train };
            let batch: Vec<&ShapeSample> = idx.iter().map(|&i| &pool[i]).collect();
            let (x, target) = shape_batch(g, &batch)?;
            let (pred, _) = cfg.forward(g, b, x)?;
            g.mse_loss(pred, &target)
        },
    )
}

struct State {
    params: ParamStore<f32>,
    adam: AdamState<f32>,
    schedule: PlateauSchedule,
    history: Vec<EpochRecord>,
    best: ParamStore<f32>,
    best_loss: f64,
    best_epoch: usize,
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn fit<L>(
    init: ParamStore<f32>,
    model_meta: serde_json::Value,
    n_train: usize,
    n_val: usize,
    hyper: &TrainConfig,
    out: Option<&Path>,
    batch_loss: L,
) -> Result<TrainOutcome>
where
    L: Fn(&mut Graph<f32>, &Bound, &[usize], bool) -> Result<Var>,
{
    hyper.validate()?;
    if n_train == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut st = match out
        .map(|d| d.join("last.ckpt"))
        .filter(|p| hyper.resume && p.exists())
    {
        Some(path) => load_state(&path, &out.unwrap().join("best.ckpt"), &init, &model_meta)?,
        None => State {
            adam: AdamState::new(&init, hyper.lr),
            schedule: PlateauSchedule::new(hyper.patience, hyper.factor)?,
            history: Vec::new(),
            best: init.clone(),
            best_loss: f64::INFINITY,
            best_epoch: 0,
            params: init,
        },
    };
    let min_lr = hyper.lr * hyper.min_lr_ratio;
    let start = st.history.len() + 1;
    let stopped = st.history.last().is_some_and(|r| r.lr < min_lr);
    for epoch in start..=hyper.epochs {
        if stopped {
            break;
        }
        let lr = st.adam.lr;
        let order = epoch_order(hyper.seed, epoch, n_train);
        let mut train_sum = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let mut g = Graph::new();
            let bound = st.params.bind(&mut g, true);
            let loss = batch_loss(&mut g, &bound, batch, false)?;
            let l = g.value(loss).data()[0] as f64;
            if !l.is_finite() {
                return Err(Error::NonFinite(epoch));
            }
            train_sum += l * batch.len() as f64;
            let mut grads = g.backward(loss)?;
            drop(g);
            let grads = st.params.collect_grads(&bound, &mut grads);
            adam_step(&mut st.params, &grads, &mut st.adam)?;
        }
        let train_loss = train_sum / n_train as f64;
        let val_loss = if n_val == 0 {
            train_loss
        } else {
            let mut s = 0.0;
            let idx: Vec<usize> = (0..n_val).collect();
            for batch in idx.chunks(hyper.batch_size) {
                let mut g = Graph::new();
                let bound = st.params.bind(&mut g, false);
                let loss = batch_loss(&mut g, &bound, batch, true)?;
                s += g.value(loss).data()[0] as f64 * batch.len() as f64;
            }
            s / n_val as f64
        };
        st.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let monitored = match hyper.plateau_metric {
            PlateauMetric::Validation => val_loss,
            PlateauMetric::Training => train_loss,
        };
        let improved = monitored < st.best_loss;
        if improved {
            st.best_loss = monitored;
            st.best = st.params.clone();
            st.best_epoch = epoch;
        }
        st.adam.lr *= st.schedule.step(monitored);
        if let Some(dir) = out {
            save_state(dir, &st, &model_meta, hyper, improved)?;
        }
        if st.adam.lr < min_lr {
            break;
        }
    }
    Ok(TrainOutcome {
        best: st.best,
        last: st.params,
        history: st.history,
        best_epoch: st.best_epoch,
    })
}

/// CSV rendering of a loss history.
pub fn history_csv(h: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for r in h {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }
    s
}

fn model_checkpoint(
    params: &ParamStore<f32>,
    model_meta: &serde_json::Value,
    epoch: usize,
) -> Checkpoint {
    let mut meta = model_meta.clone();
    meta["epoch"] = json!(epoch);
    let mut ck = Checkpoint::new(meta);
    ck.put_store("", params);
    ck
}

fn save_state(
    dir: &Path,
    st: &State,
    model_meta: &serde_json::Value,
    hyper: &TrainConfig,
    improved: bool,
) -> Result<()> {
    let epoch = st.history.len();
    if improved {
        model_checkpoint(&st.best, model_meta, st.best_epoch).save(dir.join("best.ckpt"))?;
    }
    let mut meta = model_meta.clone();
    meta["epoch"] = json!(epoch);
    meta["train"] = json!(hyper);
    meta["adam"] = json!({"lr": st.adam.lr, "t": st.adam.t});
    meta["schedule"] = json!(st.schedule);
    meta["history"] = json!(st.history);
    meta["best_loss"] = json!(st.best_loss);
    meta["best_epoch"] = json!(st.best_epoch);
    let mut ck = Checkpoint::new(meta);
    ck.put_store("model.", &st.params);
    for (i, (name, t)) in st.params.iter().enumerate() {
        ck.tensors.insert(
            format!("adam.m.{name}"),
            Tensor::new(t.shape().to_vec(), st.adam.m[i].clone())?,
        );
        ck.tensors.insert(
            format!("adam.v.{name}"),
            Tensor::new(t.shape().to_vec(), st.adam.v[i].clone())?,
        );
    }
    ck.save(dir.join("last.ckpt"))?;
    let log = dir.join("log.csv");
    std::fs::write(&log, history_csv(&st.history)).map_err(|e| Error::io(&log, e))
}

fn meta_field<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str) -> Result<T> {
    serde_json::from_value(meta[key].clone())
        .map_err(|e| Error::format("checkpoint", format!("{key}: {e}")))
}

fn load_state(
    last: &Path,
    best: &Path,
    init: &ParamStore<f32>,
    model_meta: &serde_json::Value,
) -> Result<State> {
    let ck = Checkpoint::load(last)?;
    if ck.meta["kind"] != model_meta["kind"] || ck.meta["config"] != model_meta["config"] {
        return Err(Error::Config(
            "checkpoint was written for a different model".into(),
        ));
    }
    let params = ck.take_store("model.");
    init.check_layout(&params)?;
    let m = ck.take_store("adam.m.");
    let v = ck.take_store("adam.v.");
    init.check_layout(&m)?;
    init.check_layout(&v)?;
    let adam_meta = &ck.meta["adam"];
    let adam = AdamState {
        lr: meta_field(adam_meta, "lr")?,
        t: meta_field(adam_meta, "t")?,
        m: m.iter().map(|(_, t)| t.data().to_vec()).collect(),
        v: v.iter().map(|(_, t)| t.data().to_vec()).collect(),
        ..AdamState::new(init, 1.0)
    };
    let best_epoch: usize = meta_field(&ck.meta, "best_epoch")?;
    let best_params = if best_epoch > 0 {
        let b = Checkpoint::load(best)?.take_store("");
        init.check_layout(&b)?;
        b
    } else {
        params.clone()
    };
    let best_loss = ck.meta["best_loss"].as_f64().unwrap_or(f64::INFINITY);
    Ok(State {
        params,
        adam,
        schedule: meta_field(&ck.meta, "schedule")?,
        history: meta_field(&ck.meta, "history")?,
        best: best_params,
        best_loss,
        best_epoch,
    })
}

/// Loads a model checkpoint written by training (`best.ckpt`) and returns
/// its kind tag, configuration JSON and weights.
pub fn load_model(path: impl AsRef<Path>) -> Result<(String, serde_json::Value, ParamStore<f32>)> {
    let ck = Checkpoint::load(path)?;
    let kind = ck.meta["kind"]
        .as_str()
        .ok_or_else(|| Error::format("checkpoint", "missing model kind"))?
        .to_string();
    Ok((kind, ck.meta["config"].clone(), ck.take_store("")))
}

/// Writes weights in the same layout as `best.ckpt`.
pub fn save_model(
    path: impl AsRef<Path>,
    kind: &str,
    config: &serde_json::Value,
    params: &ParamStore<f32>,
) -> Result<()> {
    model_checkpoint(params, &json!({"kind": kind, "config": config}), 0).save(path)
}
