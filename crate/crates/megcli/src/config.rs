use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use diffcore::SeededRng;
use flatgpt::{LmConfig, LmTrainConfig};
use megsynth::{CorpusConfig, TaskType};
use rollgen::RolloutConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use stresslab::EvalConfig;
use tokmix::{TokenizerConfig, TrainConfig};

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    /// Full-scale published settings, kept for reference; never trains.
    PaperDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSection {
    pub n_train: usize,
    pub n_eval: usize,
    #[serde(flatten)]
    pub config: CorpusConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSection {
    #[serde(flatten)]
    pub model: TokenizerConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmSection {
    #[serde(flatten)]
    pub model: LmConfig,
    pub train: LmTrainConfig,
    /// Tokens per sequence of the held-out loss-vs-context curve.
    pub curve_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSection {
    #[serde(flatten)]
    pub config: RolloutConfig,
    /// Evaluation sessions to roll out; every task when absent.
    pub task: Option<TaskType>,
}

/// One document configuring every stage. Seeds inside sections are
/// replaced by streams derived from `seed` when the config is resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    pub tokenizer: TokenizerSection,
    pub lm: LmSection,
    pub rollout: RolloutSection,
    pub eval: EvalConfig,
}

pub const SEED_ENV: &str = "BRAINTOK_SEED";

/// Seed of a pipeline stage, derived from the master seed.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    SeededRng::named(master, &format!("megcli/{stage}")).next_u64()
}

impl RunConfig {
    pub fn desk(seed: u64, out_dir: PathBuf) -> Self {
        let tok = TokenizerConfig::desk(8);
        let mut train = LmTrainConfig::desk(0);
        train.log_every = 250;
        let cfg = Self {
            preset: Preset::Desk,
            seed,
            out_dir,
            corpus: CorpusSection {
                n_train: 40,
                n_eval: 36,
                config: CorpusConfig::default(),
            },
            lm: LmSection {
                model: LmConfig::for_tokenizer(&tok),
                train,
                curve_tokens: 1024,
            },
            tokenizer: TokenizerSection {
                model: tok,
                train: TrainConfig::desk(0),
            },
            rollout: RolloutSection {
                config: RolloutConfig::desk(0),
                task: Some(TaskType::Rest),
            },
            eval: EvalConfig::desk(0),
        };
        cfg.resolved()
    }

    /// The published full-scale settings: 68 channels, 296.96 s segments.
    pub fn paper_doc(seed: u64, out_dir: PathBuf) -> Self {
        let cfg = Self {
            preset: Preset::PaperDoc,
            seed,
            out_dir,
            corpus: CorpusSection {
                n_train: 4403,
                n_eval: 198,
                config: CorpusConfig {
                    channels: 68,
                    fs: 100.0,
                    duration_s: 600.0,
                    ..CorpusConfig::default()
                },
            },
            tokenizer: TokenizerSection {
                model: TokenizerConfig::paper(68),
                train: TrainConfig::paper(0),
            },
            lm: LmSection {
                model: LmConfig::paper(),
                train: LmTrainConfig::paper(0),
                curve_tokens: 24_576,
            },
            rollout: RolloutSection {
                config: RolloutConfig::paper(0),
                task: None,
            },
            eval: EvalConfig::paper(0),
        };
        cfg.resolved()
    }

    pub fn preset(p: Preset, seed: u64, out_dir: PathBuf) -> Self {
        match p {
            Preset::Desk => Self::desk(seed, out_dir),
            Preset::PaperDoc => Self::paper_doc(seed, out_dir),
        }
    }

    /// Copies stage seeds from the master seed.
    pub fn resolved(mut self) -> Self {
        let m = self.seed;
        self.tokenizer.train.seed = stage_seed(m, "train-tokenizer");
        self.lm.train.seed = stage_seed(m, "train-lm");
        self.rollout.config.seed = stage_seed(m, "rollout");
        self.eval.seed = stage_seed(m, "evaluate");
        self
    }

    pub fn corpus_seed(&self) -> u64 {
        stage_seed(self.seed, "gen-data")
    }

    pub fn load(path: &Path) -> Result<Value> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Builds the config from a JSON document after applying dotted
    /// `path=value` overrides and the seed environment variable.
    pub fn from_value(mut v: Value, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        if let Some(s) = env_seed {
            let seed: u64 = s
                .parse()
                .map_err(|_| UsageError(format!("{SEED_ENV}={s} is not an unsigned integer")))?;
            v["seed"] = Value::from(seed);
        }
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| UsageError(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg.resolved())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| -> Result<()> { Err(UsageError(m).into()) };
        if let Err(e) = self.tokenizer.model.validate() {
            return bad(format!("tokenizer: {e}"));
        }
        if let Err(e) = self.lm.model.validate() {
            return bad(format!("lm: {e}"));
        }
        let t = &self.tokenizer.model;
        let l = &self.lm.model;
        if l.vocab != t.codebook_size || l.levels != t.levels || l.streams != t.n_neuro || l.window_rows != t.latent_len() {
            return bad("lm vocabulary, levels, streams and window rows must match the tokenizer".into());
        }
        if t.channels != self.corpus.config.channels {
            return bad(format!(
                "tokenizer expects {} channels, corpus has {}",
                t.channels, self.corpus.config.channels
            ));
        }
        if let Err(e) = self.rollout.config.plan(t, self.corpus.config.fs) {
            return bad(format!("rollout: {e}"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Sets `a.b.c=value` inside `v`. The path must already exist; the value
/// is parsed as JSON and falls back to a plain string.
pub fn apply_override(v: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override `{spec}` is not path=value")))?;
    let mut cur = &mut *v;
    for key in path.split('.') {
        cur = cur
            .get_mut(key)
            .ok_or_else(|| UsageError(format!("override `{spec}`: no setting `{path}`")))?;
    }
    *cur = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
