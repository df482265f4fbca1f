//! Small CPU neural-network toolkit: NCHW tensors, convolution,
//! transposed convolution, fully-connected and batch-norm layers with
//! explicit backward passes, and an Adam optimizer.
//!
//! Everything is single-threaded and deterministic for a given seed.

pub mod layers;
pub mod network;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use layers::{Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Layer, Linear, Mode, Param};
pub use network::{Grads, Init, Network, Trace};
pub use optim::Adam;
pub use tensor::Tensor;
