use std::path::Path;

use flatgpt::Lm;
use megsynth::{preprocess, read_recording, CorpusManifest, Recording, Split, TaskType};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tokmix::Tokenizer;

use crate::config::RolloutConfig;
use crate::error::{Result, RollError};
use crate::rollout::{make_rollout, pair_seed, PairMeta, RolloutPair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSession {
    pub session: String,
    pub reason: String,
}

/// Index of a rollout directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub config: RolloutConfig,
    pub task: Option<TaskType>,
    pub pairs: Vec<PairMeta>,
    pub skipped: Vec<SkippedSession>,
}

impl BatchManifest {
    pub const FILE_NAME: &'static str = "rollouts.json";

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(Self::FILE_NAME))?)?)
    }

    /// Reads every listed pair back from `dir`.
    pub fn load_pairs(&self, dir: &Path) -> Result<Vec<RolloutPair>> {
        self.pairs.iter().map(|m| RolloutPair::load(dir, &m.session)).collect()
    }
}

/// Earliest cleaned segment of the session long enough for a rollout.
fn usable_segment(corpus_dir: &Path, path: &str, manifest: &CorpusManifest, need_s: f64) -> Result<Recording> {
    let raw = read_recording(&corpus_dir.join(path))?;
    let segs = preprocess(&raw, &manifest.config.clean);
    let longest = segs.iter().map(|s| s.duration_s()).fold(0.0, f64::max);
    segs.into_iter()
        .find(|s| s.duration_s() + 1e-9 >= need_s)
        .ok_or_else(|| RollError::Skip(format!("longest clean segment {longest:.2} s is shorter than {need_s} s")))
}

/// One rollout per evaluation session of the chosen task (all tasks when
/// `task` is `None`), each from the first usable cleaned segment and its
/// own seed derived from the session id. Pairs and `rollouts.json` are
/// written to `out_dir`.
pub fn rollout_batch(
    corpus_dir: &Path,
    task: Option<TaskType>,
    tok: &Tokenizer,
    lm: &Lm,
    cfg: &RolloutConfig,
    out_dir: &Path,
) -> Result<BatchManifest> {
    let manifest = CorpusManifest::load(corpus_dir)?;
    cfg.plan(&tok.config, manifest.config.fs)?;
    let entries: Vec<_> = manifest
        .split(Split::Eval)
        .filter(|e| task.map_or(true, |t| e.task == t))
        .collect();

    let mut skipped = Vec::new();
    let mut usable = Vec::new();
    let segments: Vec<_> = entries
        .par_iter()
        .map(|e| usable_segment(corpus_dir, &e.path, &manifest, cfg.total_s))
        .collect();
    for (e, seg) in entries.iter().zip(segments) {
        match seg {
            Ok(s) => usable.push((e.session.clone(), s)),
            Err(RollError::Skip(reason)) => skipped.push(SkippedSession {
                session: e.session.clone(),
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    if usable.len() < 2 {
        return Err(RollError::Protocol(format!(
            "{} usable evaluation sessions for task {}; controls need at least 2",
            usable.len(),
            task.map_or("any", |t| t.name())
        )));
    }

    std::fs::create_dir_all(out_dir)?;
    let pairs: Vec<PairMeta> = usable
        .par_iter()
        .map(|(session, seg)| -> Result<PairMeta> {
            let pair = make_rollout(seg, tok, lm, cfg, pair_seed(cfg.seed, session))?;
            pair.save(out_dir)?;
            Ok(pair.meta)
        })
        .collect::<Result<_>>()?;
    let out = BatchManifest {
        config: cfg.clone(),
        task,
        pairs,
        skipped,
    };
    std::fs::write(out_dir.join(BatchManifest::FILE_NAME), serde_json::to_string_pretty(&out)?)?;
    Ok(out)
}
