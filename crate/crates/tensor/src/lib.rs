//! Dense NCHW tensors and a tape-based reverse-mode differentiation engine
//! covering the operators used by the edge and change-detection networks.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod init;
mod kernels;
pub mod optim;
pub mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use kernels::ConvGeom;
pub use params::{BufferId, ParamId, ParamStore, Parameter, Session};
pub use scalar::Scalar;
pub use tape::{BatchStats, BnMode, Gradients, Tape, Var};
pub use tensor::Tensor;
