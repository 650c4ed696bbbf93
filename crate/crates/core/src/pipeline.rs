//! End-to-end orchestration: dataset loading, cropping, sample assembly,
//! training, inference and evaluation. The command-line tool is a thin
//! layer over the `cmd_*` functions here.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::eval::{emit_report, write_report, ComparisonReport, PatientResult, Stratum};
use crate::mesh::{
    load_mesh, rasterize_mesh, save_mesh, save_obj, surface_metrics, HdPhaseReduction, LabelMask,
    ValveMesh, DEFAULT_THICKNESS_MM,
};
use crate::nn::{from_quadmesh, to_quadmesh, DenseNet3DConfig, ParamStore, UNet3DConfig};
use crate::phantom::{read_case_manifest, read_dataset_manifest, write_dataset, DatasetManifest};
use crate::train::{
    kfold_split, load_model, shape_predict, train_shape, train_unet, unet_predict, FoldSplit,
    SegSample, ShapeSample, TrainConfig, TrainOutcome,
};
use crate::volume::{
    augment, augmentation_grid, build_crop_frame, crop_oriented, load_landmarks, load_volume,
    normalize, AugmentSpec, CropFrame, LandmarkSet, Volume, AUGMENTATION_COUNT, DEFAULT_CROP_DIM,
    DEFAULT_WINDOW,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub unet_checkpoint: Option<PathBuf>,
    pub shape_checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub crop_margin: f64,
    pub crop_dim: usize,
    pub window: [f64; 2],
    pub label_thickness_mm: f64,
    /// Feed U-Net probability maps to the shape network.
    pub with_maps: bool,
    pub folds: usize,
    pub fold_index: usize,
    /// Phases used per patient (evenly spaced); `None` keeps all of them.
    pub phases_per_patient: Option<usize>,
    /// Augmented copies per training image, the untouched image included.
    pub augmentations: usize,
    pub hd_reduction: HdPhaseReduction,
    pub generate: GenerateConfig,
    pub unet: UNet3DConfig,
    pub unet_train: TrainConfig,
    pub shape: DenseNet3DConfig,
    pub shape_train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub patients: usize,
    pub mr_fraction: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            patients: 100,
            mr_fraction: 0.3,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            unet_checkpoint: None,
            shape_checkpoint: None,
            seed: 0,
            crop_margin: 1.5,
            crop_dim: DEFAULT_CROP_DIM,
            window: [DEFAULT_WINDOW.0, DEFAULT_WINDOW.1],
            label_thickness_mm: DEFAULT_THICKNESS_MM,
            with_maps: true,
            folds: 10,
            fold_index: 0,
            phases_per_patient: None,
            augmentations: AUGMENTATION_COUNT,
            hd_reduction: HdPhaseReduction::Mean,
            generate: GenerateConfig::default(),
            unet: UNet3DConfig::default(),
            unet_train: TrainConfig::default(),
            shape: DenseNet3DConfig::default(),
            shape_train: TrainConfig::shape_default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Sets the master seed and both training seeds.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.unet_train.seed = seed;
        self.shape_train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.crop_margin >= 1.0) {
            return Err(Error::Config(format!(
                "crop_margin must be >= 1, got {}",
                self.crop_margin
            )));
        }
        if self.crop_dim == 0 || self.crop_dim % 32 != 0 {
            return Err(Error::Config(format!(
                "crop_dim {} must be a positive multiple of 32",
                self.crop_dim
            )));
        }
        if !(self.window[0] < self.window[1]) {
            return Err(Error::Config("window must be increasing".into()));
        }
        if !(self.label_thickness_mm > 0.0) {
            return Err(Error::Config("label thickness must be positive".into()));
        }
        if self.folds < 3 || self.fold_index >= self.folds {
            return Err(Error::Config(format!(
                "fold {} of {} is invalid",
                self.fold_index, self.folds
            )));
        }
        if self.phases_per_patient == Some(0) {
            return Err(Error::Config("phases_per_patient must be positive".into()));
        }
        if !(1..=AUGMENTATION_COUNT).contains(&self.augmentations) {
            return Err(Error::Config(format!(
                "augmentations must be in 1..={AUGMENTATION_COUNT}"
            )));
        }
        if !(0.0..=1.0).contains(&self.generate.mr_fraction) {
            return Err(Error::Config("mr_fraction must be in [0, 1]".into()));
        }
        self.unet.validate().map_err(config)?;
        self.shape.validate().map_err(config)?;
        self.unet_train.validate()?;
        self.shape_train.validate()?;
        if self.shape.in_channels != shape_channels(self.with_maps) {
            return Err(Error::Config(format!(
                "shape network takes {} channels but with_maps={} supplies {}",
                self.shape.in_channels,
                self.with_maps,
                shape_channels(self.with_maps)
            )));
        }
        Ok(())
    }

    fn crop_dims(&self) -> [usize; 3] {
        [self.crop_dim; 3]
    }
}

fn config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Image plus anterior and posterior probabilities, or the image alone.
pub fn shape_channels(with_maps: bool) -> usize {
    if with_maps {
        3
    } else {
        1
    }
}

/// One patient as listed in a dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub stratum: Stratum,
    pub dir: PathBuf,
}

pub fn list_patients(root: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<PatientRecord>)> {
    let root = root.as_ref();
    let m = read_dataset_manifest(root)?;
    let mut out = Vec::with_capacity(m.cases.len());
    for c in &m.cases {
        let stratum = match c.stratum.as_str() {
            "normal" => Stratum::Normal,
            "mr" => Stratum::Mr,
            s => {
                return Err(Error::format(
                    "dataset manifest",
                    format!("unknown stratum {s:?}"),
                ))
            }
        };
        out.push(PatientRecord {
            id: c.id.clone(),
            stratum,
            dir: root.join(&c.id),
        });
    }
    Ok((m, out))
}

/// `take` evenly spaced indices out of `0..q`, always including 0.
pub fn phase_subset(q: usize, take: Option<usize>) -> Vec<usize> {
    match take {
        Some(k) if k < q => (0..k).map(|i| i * q / k).collect(),
        _ => (0..q).collect(),
    }
}

/// A normalised crop in frame-local coordinates with its annotation.
#[derive(Debug, Clone)]
pub struct PreparedPhase {
    pub patient: String,
    pub phase: usize,
    pub stratum: Stratum,
    /// Maps crop-local coordinates back to the scanner frame.
    pub frame: CropFrame,
    /// Normalised intensities on the local crop grid.
    pub image: Volume,
    /// Ground truth in local coordinates.
    pub mesh_local: ValveMesh,
}

/// Crops and normalises one phase, returning the frame and local crop.
pub fn crop_phase(
    cfg: &PipelineConfig,
    volume: &Volume,
    lm: &LandmarkSet,
) -> Result<(CropFrame, Volume)> {
    lm.validate_for(volume)?;
    let frame = build_crop_frame(lm, cfg.crop_margin, cfg.crop_dims())?;
    let crop = crop_oriented(volume, &frame)?;
    Ok((frame, normalize(&crop, cfg.window[0], cfg.window[1])?))
}

pub fn prepare_patient(cfg: &PipelineConfig, p: &PatientRecord) -> Result<Vec<PreparedPhase>> {
    let m = read_case_manifest(&p.dir)?;
    let lm = load_landmarks(p.dir.join(&m.landmarks))?;
    if m.volumes.len() != m.meshes.len() {
        return Err(Error::format(
            "case manifest",
            format!("{}: volume and mesh counts differ", p.id),
        ));
    }
    phase_subset(m.volumes.len(), cfg.phases_per_patient)
        .into_iter()
        .map(|k| {
            let v = load_volume(p.dir.join(&m.volumes[k]))?;
            let mesh = load_mesh(p.dir.join(&m.meshes[k]))?;
            let (frame, image) = crop_phase(cfg, &v, &lm)?;
            Ok(PreparedPhase {
                patient: p.id.clone(),
                phase: k,
                stratum: p.stratum,
                frame,
                image,
                mesh_local: mesh.map_points(|x| frame.to_local(x))?,
            })
        })
        .collect()
}

pub fn prepare_patients(cfg: &PipelineConfig, ps: &[&PatientRecord]) -> Result<Vec<PreparedPhase>> {
    let mut out = Vec::new();
    for p in ps {
        out.extend(prepare_patient(cfg, p)?);
    }
    Ok(out)
}

fn local_frame(cfg: &PipelineConfig, f: &CropFrame) -> CropFrame {
    CropFrame::local(f.scale, cfg.crop_dims())
}

/// Augmentation draws for one prepared phase: the first `count` entries of
/// the fixed grid, seeded per patient and phase.
fn augment_specs(cfg: &PipelineConfig, p: &PreparedPhase) -> Vec<AugmentSpec> {
    let key = p
        .patient
        .bytes()
        .fold(cfg.seed, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut specs = augmentation_grid(key.wrapping_add(p.phase as u64 * 7919));
    specs.truncate(cfg.augmentations);
    specs
}

/// Augmented (image, local mesh) pairs of one phase, untouched copy first.
pub fn augmented_views(
    cfg: &PipelineConfig,
    p: &PreparedPhase,
    train: bool,
) -> Result<Vec<(Volume, ValveMesh)>> {
    if !train {
        return Ok(vec![(p.image.clone(), p.mesh_local.clone())]);
    }
    augment_specs(cfg, p)
        .iter()
        .map(|s| {
            let (v, mut m) = augment(&p.image, std::slice::from_ref(&p.mesh_local), s)?;
            Ok((v, m.remove(0)))
        })
        .collect()
}

pub fn seg_samples(
    cfg: &PipelineConfig,
    phases: &[PreparedPhase],
    train: bool,
) -> Result<Vec<SegSample>> {
    let mut out = Vec::new();
    for p in phases {
        let lf = local_frame(cfg, &p.frame);
        for (image, mesh) in augmented_views(cfg, p, train)? {
            out.push(SegSample {
                mask: rasterize_mesh(&mesh, &lf, cfg.label_thickness_mm)?,
                image: image.into_data(),
            });
        }
    }
    Ok(out)
}

/// Network input for the shape regressor: the image, followed by the
/// anterior and posterior probability maps when a U-Net is given.
pub fn shape_input(
    image: &[f32],
    dims: [usize; 3],
    unet: Option<(&UNet3DConfig, &ParamStore<f32>)>,
) -> Result<Vec<f32>> {
    let mut input = image.to_vec();
    if let Some((cfg, params)) = unet {
        let probs = unet_predict(cfg, params, image, dims)?;
        let v = image.len();
        input.extend_from_slice(&probs[..2 * v]);
    }
    Ok(input)
}

pub fn shape_samples(
    cfg: &PipelineConfig,
    phases: &[PreparedPhase],
    train: bool,
    unet: Option<(&UNet3DConfig, &ParamStore<f32>)>,
) -> Result<Vec<ShapeSample>> {
    if cfg.with_maps != unet.is_some() {
        return Err(Error::Config(
            "probability maps need a U-Net and vice versa".into(),
        ));
    }
    let dims = cfg.crop_dims();
    let mut out = Vec::new();
    for p in phases {
        let lf = local_frame(cfg, &p.frame);
        for (image, mesh) in augmented_views(cfg, p, train)? {
            out.push(ShapeSample {
                input: shape_input(image.data(), dims, unet)?,
                channels: shape_channels(cfg.with_maps),
                dims,
                target: from_quadmesh(&mesh, &lf),
            });
        }
    }
    Ok(out)
}

/// The configured fold over the dataset's patients.
pub fn fold_for(cfg: &PipelineConfig, patients: &[PatientRecord]) -> Result<FoldSplit> {
    let ids: Vec<String> = patients.iter().map(|p| p.id.clone()).collect();
    let mut folds = kfold_split(&ids, cfg.folds, cfg.seed)?;
    Ok(folds.swap_remove(cfg.fold_index))
}

fn select<'a>(patients: &'a [PatientRecord], ids: &[String]) -> Vec<&'a PatientRecord> {
    ids.iter()
        .filter_map(|id| patients.iter().find(|p| &p.id == id))
        .collect()
}

fn write_json_file<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::format("json", e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_generate(
    n: usize,
    mr_fraction: f64,
    seed: u64,
    out: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::Config("need at least one patient".into()));
    }
    if !(0.0..=1.0).contains(&mr_fraction) {
        return Err(Error::Config(format!(
            "mr_fraction {mr_fraction} outside [0, 1]"
        )));
    }
    write_dataset(out, n, mr_fraction, seed)
}

struct FoldData {
    split: FoldSplit,
    train: Vec<PreparedPhase>,
    val: Vec<PreparedPhase>,
}

fn load_fold(cfg: &PipelineConfig) -> Result<FoldData> {
    let (_, patients) = list_patients(&cfg.data_root)?;
    let split = fold_for(cfg, &patients)?;
    write_json_file(&cfg.out_dir.join("split.json"), &split)?;
    Ok(FoldData {
        train: prepare_patients(cfg, &select(&patients, &split.train_ids))?,
        val: prepare_patients(cfg, &select(&patients, &split.val_ids))?,
        split,
    })
}

/// Trains the U-Net on the configured fold; writes checkpoints and the log
/// under `out_dir/unet`.
pub fn cmd_train_unet(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_fold(cfg)?;
    let train = seg_samples(cfg, &data.train, true)?;
    let val = seg_samples(cfg, &data.val, false)?;
    drop(data.split);
    train_unet(
        &cfg.unet,
        &train,
        &val,
        &cfg.unet_train,
        Some(&cfg.out_dir.join("unet")),
    )
}

/// Directory name for a shape model trained with or without maps.
pub fn shape_dir_name(with_maps: bool) -> &'static str {
    if with_maps {
        "shape_maps"
    } else {
        "shape_nomaps"
    }
}

pub fn load_unet(path: &Path) -> Result<(UNet3DConfig, ParamStore<f32>)> {
    let (kind, conf, params) = load_model(path)?;
    if kind != "unet" {
        return Err(Error::Config(format!(
            "{} holds a {kind} model, not a U-Net",
            path.display()
        )));
    }
    let c: UNet3DConfig =
        serde_json::from_value(conf).map_err(|e| Error::format("checkpoint", e))?;
    c.init_params::<f32>(0)?.check_layout(&params)?;
    Ok((c, params))
}

pub fn load_shape(path: &Path) -> Result<(DenseNet3DConfig, ParamStore<f32>)> {
    let (kind, conf, params) = load_model(path)?;
    if kind != "densenet" {
        return Err(Error::Config(format!(
            "{} holds a {kind} model, not a DenseNet",
            path.display()
        )));
    }
    let c: DenseNet3DConfig =
        serde_json::from_value(conf).map_err(|e| Error::format("checkpoint", e))?;
    c.init_params::<f32>(0)?.check_layout(&params)?;
    Ok((c, params))
}

fn required(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = p
        .clone()
        .ok_or_else(|| Error::Config(format!("{what} checkpoint not configured")))?;
    if !p.exists() {
        return Err(Error::Config(format!(
            "{what} checkpoint {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

/// Trains the shape regressor; with maps, the configured U-Net supplies the
/// probability channels. Output goes to `out_dir/shape_maps` or
/// `out_dir/shape_nomaps`.
pub fn cmd_train_shape(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let unet = if cfg.with_maps {
        Some(load_unet(&required(&cfg.unet_checkpoint, "U-Net")?)?)
    } else {
        None
    };
    let data = load_fold(cfg)?;
    let u = unet.as_ref().map(|(c, p)| (c, p));
    let train = shape_samples(cfg, &data.train, true, u)?;
    let val = shape_samples(cfg, &data.val, false, u)?;
    drop(data);
    train_shape(
        &cfg.shape,
        &train,
        &val,
        &cfg.shape_train,
        Some(&cfg.out_dir.join(shape_dir_name(cfg.with_maps))),
    )
}

/// Frozen networks for inference.
pub struct Models {
    pub unet: Option<(UNet3DConfig, ParamStore<f32>)>,
    pub shape: (DenseNet3DConfig, ParamStore<f32>),
}

impl Models {
    /// Loads the shape network and, with maps, the U-Net.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let shape = load_shape(&required(&cfg.shape_checkpoint, "shape")?)?;
        let unet = if cfg.with_maps {
            Some(load_unet(&required(&cfg.unet_checkpoint, "U-Net")?)?)
        } else {
            None
        };
        Self::new(unet, shape)
    }

    pub fn new(
        unet: Option<(UNet3DConfig, ParamStore<f32>)>,
        shape: (DenseNet3DConfig, ParamStore<f32>),
    ) -> Result<Self> {
        if shape.0.in_channels != shape_channels(unet.is_some()) {
            return Err(Error::Config(format!(
                "shape network expects {} input channels",
                shape.0.in_channels
            )));
        }
        Ok(Self { unet, shape })
    }

    /// Mesh for one normalised local crop, placed back in the scanner frame.
    pub fn predict(&self, image: &Volume, frame: &CropFrame, phase: usize) -> Result<ValveMesh> {
        let dims = image.dims();
        let input = shape_input(image.data(), dims, self.unet.as_ref().map(|(c, p)| (c, p)))?;
        let values = shape_predict(&self.shape.0, &self.shape.1, &input, dims)?;
        to_quadmesh(&values, frame, phase)
    }
}

/// Result of inferring one phase.
#[derive(Debug, Clone)]
pub struct PhaseInference {
    pub mesh: ValveMesh,
    pub seconds: f64,
}

pub fn infer_phase(
    cfg: &PipelineConfig,
    models: &Models,
    volume: &Volume,
    lm: &LandmarkSet,
    phase: usize,
) -> Result<PhaseInference> {
    let start = Instant::now();
    let (frame, image) = crop_phase(cfg, volume, lm)?;
    let mesh = models.predict(&image, &frame, phase)?;
    Ok(PhaseInference {
        mesh,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn write_phase(dir: &Path, phase: usize, mesh: &ValveMesh) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_mesh(dir.join(format!("phase_{phase:02}.mesh.json")), mesh)?;
    save_obj(dir.join(format!("phase_{phase:02}.obj")), mesh)
}

/// Per-phase wall-clock log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub patient: String,
    pub phase: usize,
    pub seconds: f64,
}

fn write_timing(out: &Path, t: &[TimingEntry]) -> Result<()> {
    let mut s = String::from("patient,phase,seconds\n");
    for e in t {
        s.push_str(&format!("{},{},{:.4}\n", e.patient, e.phase, e.seconds));
    }
    let path = out.join("timing.csv");
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

/// Infers explicit volumes sharing one landmark file; phase `k` is the
/// `k`-th volume. Writes `<out>/phase_XX.{mesh.json,obj}` and `timing.csv`.
pub fn cmd_infer_volumes(
    cfg: &PipelineConfig,
    volumes: &[PathBuf],
    landmarks: &Path,
    out: &Path,
) -> Result<Vec<TimingEntry>> {
    cfg.validate()?;
    let models = Models::load(cfg)?;
    let lm = load_landmarks(landmarks)?;
    let mut timing = Vec::new();
    for (k, path) in volumes.iter().enumerate() {
        let v = load_volume(path)?;
        let r = infer_phase(cfg, &models, &v, &lm, k)?;
        write_phase(out, k, &r.mesh)?;
        timing.push(TimingEntry {
            patient: path.display().to_string(),
            phase: k,
            seconds: r.seconds,
        });
    }
    write_timing(out, &timing)?;
    Ok(timing)
}

/// Infers every phase of the given patients (all patients when `ids` is
/// `None`), writing `<out>/<id>/phase_XX.*` and `<out>/timing.csv`.
pub fn cmd_infer_dataset(
    cfg: &PipelineConfig,
    ids: Option<&[String]>,
    out: &Path,
) -> Result<Vec<TimingEntry>> {
    cfg.validate()?;
    let models = Models::load(cfg)?;
    let (_, patients) = list_patients(&cfg.data_root)?;
    let chosen: Vec<&PatientRecord> = match ids {
        Some(ids) => {
            let sel = select(&patients, ids);
            if sel.len() != ids.len() {
                return Err(Error::InvalidArgument(
                    "unknown patient id requested".into(),
                ));
            }
            sel
        }
        None => patients.iter().collect(),
    };
    let mut timing = Vec::new();
    for p in chosen {
        let m = read_case_manifest(&p.dir)?;
        let lm = load_landmarks(p.dir.join(&m.landmarks))?;
        for k in phase_subset(m.volumes.len(), cfg.phases_per_patient) {
            let v = load_volume(p.dir.join(&m.volumes[k]))?;
            let r = infer_phase(cfg, &models, &v, &lm, k)?;
            write_phase(&out.join(&p.id), k, &r.mesh)?;
            timing.push(TimingEntry {
                patient: p.id.clone(),
                phase: k,
                seconds: r.seconds,
            });
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_timing(out, &timing)?;
    Ok(timing)
}

/// Test-fold patient ids for the configured fold.
pub fn test_ids(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let (_, patients) = list_patients(&cfg.data_root)?;
    Ok(fold_for(cfg, &patients)?.test_ids)
}

/// Metrics of every patient found in `pred_dir`, against the ground truth
/// of the same phases in the dataset at `gt_root`.
pub fn evaluate_predictions(
    pred_dir: &Path,
    gt_root: &Path,
    reduction: HdPhaseReduction,
) -> Result<Vec<PatientResult>> {
    let (_, patients) = list_patients(gt_root)?;
    let mut out = Vec::new();
    let mut found = Vec::new();
    let entries = std::fs::read_dir(pred_dir).map_err(|e| Error::io(pred_dir, e))?;
    for e in entries {
        let e = e.map_err(|e| Error::io(pred_dir, e))?;
        if e.path().is_dir() {
            found.push(e.file_name().to_string_lossy().to_string());
        }
    }
    found.sort();
    for id in found {
        let p = patients
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::Pairing(format!("prediction for unknown patient {id}")))?;
        let m = read_case_manifest(&p.dir)?;
        let mut pred = Vec::new();
        let mut gt = Vec::new();
        for k in 0..m.meshes.len() {
            let path = pred_dir.join(&id).join(format!("phase_{k:02}.mesh.json"));
            if path.exists() {
                pred.push(load_mesh(&path)?);
                gt.push(load_mesh(p.dir.join(&m.meshes[k]))?);
            }
        }
        if pred.is_empty() {
            return Err(Error::Pairing(format!("no phase predictions for {id}")));
        }
        out.push(PatientResult {
            patient_id: id,
            metrics: surface_metrics(&pred, &gt, reduction)?,
            stratum: p.stratum,
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} holds no predictions",
            pred_dir.display()
        )));
    }
    Ok(out)
}

/// Scores each named prediction set and writes the comparison report to
/// `out` (first set is the baseline).
pub fn cmd_evaluate(
    preds: &[(String, PathBuf)],
    gt_root: &Path,
    reduction: HdPhaseReduction,
    out: &Path,
) -> Result<ComparisonReport> {
    let conditions = preds
        .iter()
        .map(|(name, dir)| Ok((name.clone(), evaluate_predictions(dir, gt_root, reduction)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = emit_report(&conditions)?;
    write_report(out, &report)?;
    let per_patient: Vec<_> = conditions
        .iter()
        .map(|(n, rs)| json!({"condition": n, "patients": rs}))
        .collect();
    write_json_file(&out.join("patients.json"), &per_patient)?;
    Ok(report)
}

/// Outcome of [`cmd_ablation`].
pub struct AblationOutcome {
    pub unet: TrainOutcome,
    pub with_maps: TrainOutcome,
    pub without_maps: TrainOutcome,
    pub report: ComparisonReport,
}

pub const WITHOUT_MAPS: &str = "without maps";
pub const WITH_MAPS: &str = "with maps";

/// Trains the U-Net and both shape regressors on the configured fold, infers
/// the test patients with each regressor and compares them. Everything is
/// written under `out_dir`; the report lands in `out_dir/report`.
pub fn cmd_ablation(cfg: &PipelineConfig) -> Result<AblationOutcome> {
    let out = &cfg.out_dir;
    let mut base = cfg.clone();
    base.with_maps = false;
    base.shape.in_channels = shape_channels(false);
    base.validate()?;
    let unet = cmd_train_unet(&base)?;

    let mut maps = base.clone();
    maps.with_maps = true;
    maps.shape.in_channels = shape_channels(true);
    maps.unet_checkpoint = Some(out.join("unet").join("best.ckpt"));
    let with_maps = cmd_train_shape(&maps)?;
    let without_maps = cmd_train_shape(&base)?;

    let ids = test_ids(&base)?;
    let mut preds = Vec::new();
    for (c, name, dir) in [
        (&mut base, WITHOUT_MAPS, "pred_nomaps"),
        (&mut maps, WITH_MAPS, "pred_maps"),
    ] {
        c.shape_checkpoint = Some(out.join(shape_dir_name(c.with_maps)).join("best.ckpt"));
        cmd_infer_dataset(c, Some(&ids), &out.join(dir))?;
        preds.push((name.to_string(), out.join(dir)));
    }
    let report = cmd_evaluate(
        &preds,
        &cfg.data_root,
        cfg.hd_reduction,
        &out.join("report"),
    )?;
    Ok(AblationOutcome {
        unet,
        with_maps,
        without_maps,
        report,
    })
}

/// Ground-truth label mask of a prepared phase on its local crop grid.
pub fn phase_mask(cfg: &PipelineConfig, p: &PreparedPhase) -> Result<LabelMask> {
    rasterize_mesh(
        &p.mesh_local,
        &local_frame(cfg, &p.frame),
        cfg.label_thickness_mm,
    )
}
