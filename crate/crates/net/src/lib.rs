//! Conditional GAN that maps a window of body velocity and acceleration UV
//! maps to garment offset UV maps for three garment templates. Layers,
//! losses and the optimizer are implemented directly with hand-written
//! backward passes.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod layers;
pub mod loss;
pub mod nets;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{NetError, Result};
pub use tensor::{Real, Tensor4};
pub use train::{train, Model, TrainConfig};
