use std::path::{Path, PathBuf};

use diffcore::SeededRng;
use flatgpt::{sliding_generate, Lm};
use megsynth::{read_recording, write_recording, Recording, TaskType};
use serde::{Deserialize, Serialize};
use tokmix::{detokenize, tokenize_segment, TokenGrid, Tokenizer};

use crate::config::RolloutConfig;
use crate::error::{Result, RollError};

/// Token bookkeeping of one rollout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub context: usize,
    /// Context tokens the model saw after truncating to its cache.
    pub prompt: usize,
    pub generated: usize,
    pub slides: usize,
}

/// JSON sidecar written beside the three recordings of a pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub session: String,
    pub subject: String,
    pub task: TaskType,
    pub seed: u64,
    pub context_s: f64,
    pub total_s: f64,
    pub token_counts: TokenCounts,
}

/// A context, the real continuation that followed it and the model's
/// open-loop continuation of the same length.
#[derive(Clone, Debug)]
pub struct RolloutPair {
    pub context: Recording,
    pub real: Recording,
    pub generated: Recording,
    /// Generated tokens as a grid flagged as model output.
    pub generated_grid: TokenGrid,
    pub meta: PairMeta,
}

/// Stream seed for a session under a master seed.
pub fn pair_seed(master: u64, session: &str) -> u64 {
    SeededRng::named(master, &format!("rollgen/{session}")).next_u64()
}

/// Generates one rollout from the start of `segment`: the first `T_c`
/// seconds are tokenized and continued for `H` seconds of tokens, which
/// are decoded window by window. Only the context samples are read.
pub fn make_rollout(
    segment: &Recording,
    tok: &Tokenizer,
    lm: &Lm,
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<RolloutPair> {
    let plan = cfg.plan(&tok.config, segment.fs as f64)?;
    if segment.samples() < plan.total_samples() {
        return Err(RollError::Skip(format!(
            "segment of {:.2} s is shorter than the {} s rollout",
            segment.duration_s(),
            cfg.total_s
        )));
    }
    let model = cache_limited(lm, cfg.max_cache_tokens)?;
    let context = segment.slice(0, plan.context_samples());
    let real = segment.slice(plan.context_samples(), plan.horizon_samples());

    let prompt = tokenize_segment(&context, tok)?.grid;
    let mut rng = SeededRng::named(seed, "rollgen/sample");
    let gen = sliding_generate(&model, &prompt.codes, plan.horizon_tokens(), &cfg.sampling(), &mut rng)?;

    let tpr = tok.config.n_neuro * tok.config.levels;
    let mut grid = TokenGrid::new(
        gen.tokens.len() / tpr,
        tok.config.n_neuro,
        tok.config.levels,
        tok.config.codebook_size,
        tok.config.hash(),
        gen.tokens,
    )?;
    grid.generated = true;
    let rows = detokenize(&grid, tok)?;
    let generated = Recording {
        data: rows.concat(),
        ..segment.meta_only()
    };
    Ok(RolloutPair {
        meta: PairMeta {
            session: segment.session_id.clone(),
            subject: segment.subject_id.clone(),
            task: segment.task,
            seed,
            context_s: cfg.context_s,
            total_s: cfg.total_s,
            token_counts: TokenCounts {
                context: prompt.codes.len(),
                prompt: prompt.codes.len() - gen.prompt_dropped,
                generated: grid.len(),
                slides: gen.slides,
            },
        },
        context,
        real,
        generated,
        generated_grid: grid,
    })
}

/// The model itself when `n` equals its context, otherwise a copy whose
/// cache holds `n` tokens.
fn cache_limited(lm: &Lm, n: usize) -> Result<std::borrow::Cow<'_, Lm>> {
    if n == lm.config.max_context {
        return Ok(std::borrow::Cow::Borrowed(lm));
    }
    if n > lm.config.max_context {
        return Err(RollError::Config(format!(
            "cache of {n} tokens exceeds the model context {}",
            lm.config.max_context
        )));
    }
    let mut m = lm.clone();
    m.config.max_context = n;
    m.config.validate()?;
    Ok(std::borrow::Cow::Owned(m))
}

/// File paths of a stored pair, keyed by session id.
pub struct PairPaths {
    pub context: PathBuf,
    pub real: PathBuf,
    pub generated: PathBuf,
    pub tokens: PathBuf,
    pub meta: PathBuf,
}

impl PairPaths {
    pub fn new(dir: &Path, session: &str) -> Self {
        Self {
            context: dir.join(format!("{session}.context.megr")),
            real: dir.join(format!("{session}.real.megr")),
            generated: dir.join(format!("{session}.generated.megr")),
            tokens: dir.join(format!("{session}.generated.megt")),
            meta: dir.join(format!("{session}.json")),
        }
    }
}

impl RolloutPair {
    pub fn save(&self, dir: &Path) -> Result<PairPaths> {
        std::fs::create_dir_all(dir)?;
        let p = PairPaths::new(dir, &self.meta.session);
        write_recording(&self.context, &p.context)?;
        write_recording(&self.real, &p.real)?;
        write_recording(&self.generated, &p.generated)?;
        self.generated_grid.write(&p.tokens)?;
        std::fs::write(&p.meta, serde_json::to_string_pretty(&self.meta)?)?;
        Ok(p)
    }

    pub fn load(dir: &Path, session: &str) -> Result<Self> {
        let p = PairPaths::new(dir, session);
        let meta: PairMeta = serde_json::from_str(&std::fs::read_to_string(&p.meta)?)?;
        let pair = Self {
            context: read_recording(&p.context)?,
            real: read_recording(&p.real)?,
            generated: read_recording(&p.generated)?,
            generated_grid: TokenGrid::read(&p.tokens)?,
            meta,
        };
        if pair.real.channels != pair.generated.channels || pair.real.samples() != pair.generated.samples() {
            return Err(RollError::Format(format!(
                "pair `{session}`: real is {}×{}, generated {}×{}",
                pair.real.channels,
                pair.real.samples(),
                pair.generated.channels,
                pair.generated.samples()
            )));
        }
        Ok(pair)
    }
}
