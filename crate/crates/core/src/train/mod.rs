//! Optimisation, learning-rate scheduling, data splitting and the training
//! loops for both networks.

mod adam;
mod schedule;
mod split;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use schedule::PlateauSchedule;
pub use split::{image_id, kfold_split, leaked_patients, owner, FoldSplit, SplitUnit};
pub use trainer::{
    history_csv, load_model, save_model, shape_predict, train_shape, train_unet, unet_predict,
    EpochRecord, PlateauMetric, SegSample, ShapeSample, TrainConfig, TrainOutcome,
};
