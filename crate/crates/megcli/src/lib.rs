//! Pipeline behind the `megcli` binary: each stage reads its
//! predecessors' artifacts from the run directory, writes its own, and
//! records content hashes in the run manifest so reruns can be skipped.

mod config;
mod manifest;
mod pipeline;
mod selfcheck;

pub use config::{apply_override, stage_seed, CorpusSection, LmSection, Preset, RolloutSection, RunConfig, TokenizerSection, SEED_ENV};
pub use manifest::{hash_tree, sha256_bytes, sha256_file, stale_files, RunManifest, StageRecord};
pub use pipeline::{render_report, ContextCurve, Pipeline, SegmentIndex, Stage, StageStatus};
pub use selfcheck::{selfcheck, CheckRow};

/// A problem with how the tool was invoked or configured; exits with 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);
