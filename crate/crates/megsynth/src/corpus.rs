use std::path::Path;

use diffcore::SeededRng;
use serde::{Deserialize, Serialize};

use crate::clean::CleanConfig;
use crate::error::{Result, SynthError};
use crate::format::write_recording;
use crate::recording::TaskType;
use crate::synth::{synth_session, BandGains, SessionSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub channels: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub clean: CleanConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            fs: 100.0,
            duration_s: 120.0,
            clean: CleanConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub split: Split,
    pub task: TaskType,
    pub subject: String,
    pub session: String,
    pub alpha_peak: f64,
    pub pink_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub config: CorpusConfig,
    pub entries: Vec<CorpusEntry>,
}

impl CorpusManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(Self::FILE_NAME))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Parameter ranges per split; evaluation sessions are drawn from shifted
/// ranges so held-out data is not a resample of the training distribution.
fn ranges(split: Split) -> ((f64, f64), (f64, f64)) {
    match split {
        Split::Train => ((8.0, 11.5), (0.8, 1.2)),
        Split::Eval => ((8.5, 12.0), (0.9, 1.4)),
    }
}

/// Generates `n_train + n_eval` sessions under `dir`, tasks assigned
/// round-robin, subjects disjoint between splits, and writes the manifest.
pub fn build_corpus(
    dir: &Path,
    n_train: usize,
    n_eval: usize,
    cfg: &CorpusConfig,
    seed: u64,
) -> Result<CorpusManifest> {
    if n_train == 0 || n_eval == 0 {
        return Err(SynthError::Config("need at least one session per split".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (split, n, prefix) in [(Split::Train, n_train, "tr"), (Split::Eval, n_eval, "ev")] {
        let mut rng = SeededRng::named(seed, &format!("megsynth/corpus/{prefix}"));
        let ((a_lo, a_hi), (b_lo, b_hi)) = ranges(split);
        for i in 0..n {
            let task = TaskType::ALL[i % 3];
            let subject = format!("{prefix}-sub{i:03}");
            let session = format!("{prefix}-ses{i:03}-{}", task.name());
            let spec = SessionSpec {
                session_id: session.clone(),
                subject_id: subject.clone(),
                task,
                channels: cfg.channels,
                fs: cfg.fs,
                duration_s: cfg.duration_s,
                seed: rng.next_u64(),
                alpha_peak: rng.uniform(a_lo, a_hi),
                pink_slope: rng.uniform(b_lo, b_hi),
                band_gains: BandGains::for_task(task),
                mixing_seed: rng.next_u64(),
            };
            let rec = synth_session(&spec, &cfg.clean)?;
            let file = format!("{session}.megr");
            write_recording(&rec, &dir.join(&file))?;
            entries.push(CorpusEntry {
                path: file,
                split,
                task,
                subject,
                session,
                alpha_peak: spec.alpha_peak,
                pink_slope: spec.pink_slope,
            });
        }
    }
    let manifest = CorpusManifest {
        seed,
        config: cfg.clone(),
        entries,
    };
    std::fs::write(
        dir.join(CorpusManifest::FILE_NAME),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}
