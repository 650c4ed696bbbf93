//! Tensors, reverse-mode differentiation and the two network architectures.

pub mod checkpoint;
mod conv;
pub mod coords;
pub mod densenet;
pub mod graph;
pub mod params;
mod pool;
pub mod tensor;
pub mod unet;

pub use checkpoint::Checkpoint;
pub use conv::ConvGeom;
pub use coords::{decode_points, from_quadmesh, to_quadmesh};
pub use densenet::{DenseNet3DConfig, Stage, OUTPUT_DIM};
pub use graph::{mish_scalar, Gradients, Graph, Var};
pub use params::{Bound, Init, ParamBuilder, ParamStore};
pub use tensor::{Real, Tensor};
pub use unet::{SkipMode, UNet3DConfig};
