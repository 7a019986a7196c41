//! Toy-scale edge network (BDCN) and pseudo-Siamese criss-cross attention
//! change network built on `agsp-tensor`.

pub mod bdcn;
pub mod ccnet;
pub mod check;
pub mod data;
mod error;
pub mod layers;

pub use error::{NetError, Result};
