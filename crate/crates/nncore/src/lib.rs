//! Minimal dense tensor library with reverse-mode autodiff, sufficient to
//! train small fully connected and convolutional networks on the CPU.

mod error;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod param;
mod real;
pub mod tape;
mod tensor;

pub use error::{NnError, Result};
pub use layers::{Conv2d, Linear};
pub use optim::{AdamW, AdamWConfig};
pub use param::{Param, ParamId, ParamStore};
pub use real::Real;
pub use tape::{CustomOp, Grads, Tape, Var};
pub use tensor::Tensor;
