//! `mitral` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error
//! (unreadable, malformed or unpaired inputs), 4 geometric degeneracy
//! (e.g. collinear landmarks), 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mitral::mesh::HdPhaseReduction;
use mitral::pipeline::{self, PipelineConfig};
use mitral::Error;

#[derive(Parser)]
#[command(
    name = "mitral",
    version,
    about = "Mitral valve quadmesh extraction from cardiac CT"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON pipeline configuration; unspecified fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        mr_fraction: Option<f64>,
    },
    /// Train the segmentation U-Net.
    TrainUnet {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the shape regressor.
    TrainShape {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        unet: Option<PathBuf>,
        #[command(flatten)]
        maps: Maps,
    },
    /// Predict quadmeshes.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        maps: Maps,
        /// Phase volumes in order; requires --landmarks.
        #[arg(long = "volume")]
        volumes: Vec<PathBuf>,
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// Dataset to run on when no volumes are given.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Only the test patients of the configured fold.
        #[arg(long)]
        test_split: bool,
        #[arg(long)]
        unet: Option<PathBuf>,
        #[arg(long)]
        shape: Option<PathBuf>,
    },
    /// Score prediction sets against ground truth and compare them.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Prediction set as NAME=DIR; the first is the baseline.
        #[arg(long = "pred", required = true)]
        preds: Vec<String>,
        /// Ground-truth dataset root.
        #[arg(long)]
        gt: PathBuf,
        /// Reduce per-phase Hausdorff distances by maximum instead of mean.
        #[arg(long)]
        hd_max: bool,
    },
}

#[derive(Args)]
struct Maps {
    #[arg(long, overrides_with = "no_maps")]
    with_maps: bool,
    #[arg(long, overrides_with = "with_maps")]
    no_maps: bool,
}

impl Maps {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if self.with_maps || self.no_maps {
            cfg.with_maps = self.with_maps;
            cfg.shape.in_channels = pipeline::shape_channels(cfg.with_maps);
        }
    }
}

fn load_config(c: &Common) -> mitral::Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.apply_seed(s);
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> mitral::Result<()> {
    match cli.command {
        Command::Generate {
            common,
            patients,
            mr_fraction,
        } => {
            let cfg = load_config(&common)?;
            let n = patients.unwrap_or(cfg.generate.patients);
            let mr = mr_fraction.unwrap_or(cfg.generate.mr_fraction);
            let m = pipeline::cmd_generate(n, mr, cfg.seed, &cfg.out_dir)?;
            println!("wrote {} cases to {}", m.cases.len(), cfg.out_dir.display());
        }
        Command::TrainUnet { common, data } => {
            let mut cfg = load_config(&common)?;
            if let Some(d) = data {
                cfg.data_root = d;
            }
            let o = pipeline::cmd_train_unet(&cfg)?;
            println!("best epoch {} of {}", o.best_epoch, o.history.len());
        }
        Command::TrainShape {
            common,
            data,
            unet,
            maps,
        } => {
            let mut cfg = load_config(&common)?;
            maps.apply(&mut cfg);
            if let Some(d) = data {
                cfg.data_root = d;
            }
            if unet.is_some() {
                cfg.unet_checkpoint = unet;
            }
            cfg.validate()?;
            let o = pipeline::cmd_train_shape(&cfg)?;
            println!("best epoch {} of {}", o.best_epoch, o.history.len());
        }
        Command::Infer {
            common,
            maps,
            volumes,
            landmarks,
            data,
            test_split,
            unet,
            shape,
        } => {
            let mut cfg = load_config(&common)?;
            maps.apply(&mut cfg);
            if let Some(d) = data {
                cfg.data_root = d;
            }
            if unet.is_some() {
                cfg.unet_checkpoint = unet;
            }
            if shape.is_some() {
                cfg.shape_checkpoint = shape;
            }
            cfg.validate()?;
            let out = cfg.out_dir.clone();
            let timing = if volumes.is_empty() {
                if landmarks.is_some() {
                    return Err(Error::Config(
                        "--landmarks needs at least one --volume".into(),
                    ));
                }
                let ids = if test_split {
                    Some(pipeline::test_ids(&cfg)?)
                } else {
                    None
                };
                pipeline::cmd_infer_dataset(&cfg, ids.as_deref(), &out)?
            } else {
                let lm =
                    landmarks.ok_or_else(|| Error::Config("--volume needs --landmarks".into()))?;
                pipeline::cmd_infer_volumes(&cfg, &volumes, &lm, &out)?
            };
            let total: f64 = timing.iter().map(|t| t.seconds).sum();
            println!(
                "inferred {} phases, {:.2} s per phase",
                timing.len(),
                total / timing.len().max(1) as f64
            );
        }
        Command::Evaluate {
            common,
            preds,
            gt,
            hd_max,
        } => {
            let cfg = load_config(&common)?;
            let preds = preds
                .iter()
                .map(|s| match s.split_once('=') {
                    Some((n, d)) if !n.is_empty() && !d.is_empty() => {
                        Ok((n.to_string(), PathBuf::from(d)))
                    }
                    _ => Err(Error::Config(format!("--pred expects NAME=DIR, got {s:?}"))),
                })
                .collect::<mitral::Result<Vec<_>>>()?;
            let reduction = if hd_max {
                HdPhaseReduction::Max
            } else {
                cfg.hd_reduction
            };
            let report = pipeline::cmd_evaluate(&preds, &gt, reduction, &cfg.out_dir)?;
            print!("{}", mitral::eval::render_text(&report));
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io { .. }
        | Error::Format { .. }
        | Error::SizeMismatch { .. }
        | Error::NonFinite(_)
        | Error::Pairing(_) => 3,
        Error::Degenerate(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
