//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Everything numeric in the workspace sits on top of this crate: the
//! [`Tape`] records a fixed set of operators over [`Tensor`]s and replays
//! them backwards, [`AdamW`] updates a [`ParamStore`], and [`SeededRng`]
//! supplies reproducible randomness. Checkpoints use the `BTCK` layout in
//! [`checkpoint`].

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod kernels;
mod optim;
mod params;
mod real;
mod rng;
mod tape;
mod tensor;

pub use error::{DiffError, Result};
pub use kernels::{conv1d_forward, conv_transpose1d_full, DftBasis, RopeTable};
pub use optim::{AdamW, AdamWConfig, StepStats};
pub use params::{Bindings, ParamStore};
pub use real::Real;
pub use rng::{hash_name, SeededRng};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
