//! Open-loop rollouts: a session segment is split into context and real
//! continuation, the context is tokenized and continued by the language
//! model with a sliding cache, and the sampled tokens are decoded back to
//! signal space and stored beside the real continuation.

mod batch;
mod config;
mod error;
mod rollout;

pub use batch::{rollout_batch, BatchManifest, SkippedSession};
pub use config::{RolloutConfig, RolloutPlan};
pub use error::{Result, RollError};
pub use rollout::{make_rollout, pair_seed, PairMeta, PairPaths, RolloutPair, TokenCounts};
