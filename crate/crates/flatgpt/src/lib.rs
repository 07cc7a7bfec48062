//! Decoder-only transformer over flattened token grids.
//!
//! Tokens are serialised time-major with the RVQ level fastest. Each token
//! is embedded with its level's table, positions enter through rotary
//! angles driven by the `(t, h, q)` triple, and the output head for a token
//! reuses the embedding table of the level that follows it.

mod config;
mod error;
mod flatten;
mod generate;
mod model;
mod sample;
mod train;

pub use config::LmConfig;
pub use error::{LmError, Result};
pub use flatten::{flat_index, flatten, position_of, triple0, unflatten, FlatStream};
pub use generate::{sliding_generate, Generation};
pub use model::{head_level, input_level, Decoder, KvCache, Lm};
pub use sample::{nucleus_probs, sample_next, SamplingConfig};
pub use train::{loss_vs_context, sequence_loss, train_lm, LmLogEntry, LmOutcome, LmTrainConfig};
