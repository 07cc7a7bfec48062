//! Causal channel-mixing convolutional tokenizer for multichannel signals.
//!
//! A strided causal encoder maps each `C × L_w` window to `L_w / r` latent
//! rows, each split into `H` streams of `d` dimensions. A `Q`-level residual
//! vector quantizer turns every stream vector into `Q` code indices, and a
//! causal transposed-conv decoder maps quantized latents back to signal.

mod config;
mod diagnostics;
mod error;
mod grid;
mod loss;
mod model;
mod rvq;
mod train;

pub use config::TokenizerConfig;
pub use diagnostics::{tokenizer_diagnostics, Diagnostics};
pub use error::{Result, TokError};
pub use grid::{detokenize, tokenize_segment, TokenGrid, Tokenized};
pub use loss::{commit_loss, tokenizer_loss, LossParts, LossVars};
pub use model::{LatentBlock, Tokenizer};
pub use rvq::{perplexity, Codebook, CodebookSet, Quantized, NULL_CODE};
pub use train::{train_tokenizer, windows_of, EpochLog, TrainConfig, TrainOutcome};
