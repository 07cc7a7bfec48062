//! Synthetic multichannel recordings with controllable spectral and
//! covariance signatures, plus the session-level preprocessing applied
//! before tokenization: per-channel robust scaling and window rejection.

mod clean;
mod corpus;
mod error;
mod format;
mod recording;
mod synth;

pub use clean::{clean_session, preprocess, quantile_sorted, robust_scale, CleanConfig, Scaled};
pub use corpus::{build_corpus, CorpusConfig, CorpusEntry, CorpusManifest, Split};
pub use error::{Result, SynthError};
pub use format::{decode_recording, encode_recording, read_recording, write_recording};
pub use recording::{Recording, TaskType};
pub use synth::{mixing_matrix, narrowband_noise, pink_noise, synth_session, BandGains, SessionSpec};
