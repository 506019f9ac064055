//! Minimal dense-tensor library with tape-based reverse-mode automatic
//! differentiation, an Adam optimizer with linear warm-up, and a versioned
//! binary checkpoint format.
//!
//! Every tensor is a contiguous row-major buffer of `f64`. Ops work on
//! 2-D matrices (rows x cols) or 1-D vectors; there is no general broadcasting.

mod error;
mod gemm;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;

pub use error::{NnError, Result};
pub use optim::{AdamConfig, AdamState, WarmupSchedule};
pub use params::{Grads, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
