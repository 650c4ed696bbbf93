//! Fully automatic mitral valve shape extraction from cardiac CT.
//!
//! The pipeline runs in three stages:
//!
//! 1. **Crop** – an oriented 64³ sub-volume is resampled around the annulus,
//!    using the fibrous trigones and the opposing annulus point to fix
//!    position, orientation and scale ([`volume`]).
//! 2. **Probability maps** – a 3D U-Net turns the crop into per-voxel
//!    anterior / posterior / background probabilities ([`nn::unet`]),
//!    trained with a weighted multi-class Tversky loss ([`loss`]).
//! 3. **Shape regression** – a 3D DenseNet-121 regresses the 19×9 anterior
//!    and 25×9 posterior quadmesh lattices from the crop plus maps
//!    ([`nn::densenet`]).
//!
//! Predictions are scored with point-to-surface chamfer and Hausdorff
//! distances ([`mesh`]) and compared across conditions with paired t-tests
//! ([`eval`]). A parametric valve phantom ([`phantom`]) provides a
//! ground-truthed dataset for training and verification.

pub mod error;
pub mod eval;
pub mod loss;
pub mod mesh;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
