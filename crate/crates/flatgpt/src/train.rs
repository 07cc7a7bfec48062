use std::path::{Path, PathBuf};

use diffcore::{AdamW, AdamWConfig, SeededRng, Tape};
use serde::{Deserialize, Serialize};

use crate::config::LmConfig;
use crate::error::{LmError, Result};
use crate::model::{Decoder, Lm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Input tokens per training sequence; a whole number of tokenizer windows.
    pub seq_tokens: usize,
    pub optim: AdamWConfig,
    pub seed: u64,
    /// Steps between log entries and, with a checkpoint directory, checkpoints.
    pub log_every: usize,
}

impl LmTrainConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            steps: 1500,
            batch_size: 4,
            seq_tokens: 1024,
            optim: AdamWConfig {
                lr: 1e-3,
                weight_decay: 0.1,
                warmup_steps: 100,
                clip_norm: Some(1.0),
                ..AdamWConfig::default()
            },
            seed,
            log_every: 100,
        }
    }
}

impl LmTrainConfig {
    /// Published full-scale schedule: 8 sequences of 24,576 tokens per
    /// step, about 8 epochs of the full corpus.
    pub fn paper(seed: u64) -> Self {
        Self {
            steps: 24_400,
            batch_size: 8,
            seq_tokens: 24_576,
            optim: AdamWConfig {
                lr: 2e-4,
                weight_decay: 0.1,
                warmup_steps: 2000,
                clip_norm: Some(1.0),
                ..AdamWConfig::default()
            },
            seed,
            log_every: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmLogEntry {
    pub step: u64,
    pub lr: f64,
    /// Mean bits per token over the steps since the previous entry.
    pub bits_per_token: f64,
    pub grad_norm: f64,
}

pub struct LmOutcome {
    pub lm: Lm,
    pub optimizer: AdamW,
    pub log: Vec<LmLogEntry>,
    pub checkpoints: Vec<PathBuf>,
}

/// Window-aligned `(stream, start)` pairs with room for `len` tokens.
fn sequence_starts(streams: &[Vec<u32>], len: usize, align: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (s, toks) in streams.iter().enumerate() {
        let mut start = 0;
        while start + len <= toks.len() {
            out.push((s, start));
            start += align;
        }
    }
    out
}

/// Teacher-forced cross-entropy (nats per token) of one sequence.
pub fn sequence_loss(lm: &Lm, tokens: &[u32]) -> Result<f64> {
    let mut tape = Tape::inference();
    let b = lm.params.bind(&mut tape);
    let n = tokens.len() - 1;
    let logits = lm.forward_var(&mut tape, &b, &tokens[..n])?;
    let targets: Vec<usize> = tokens[1..].iter().map(|&v| v as usize).collect();
    let l = tape.cross_entropy(logits, &targets)?;
    Ok(tape.value(l).item() as f64)
}

/// Minimises next-token cross-entropy over random window-aligned
/// sequences of `seq_tokens + 1` tokens drawn from `streams`.
pub fn train_lm(
    config: &LmConfig,
    streams: &[Vec<u32>],
    tc: &LmTrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<LmOutcome> {
    let w_tok = config.window_tokens();
    if tc.seq_tokens == 0 || tc.seq_tokens % w_tok != 0 || tc.seq_tokens > config.max_context {
        return Err(LmError::Config(format!(
            "sequence length {} must be a multiple of {w_tok} within the context {}",
            tc.seq_tokens, config.max_context
        )));
    }
    if tc.batch_size == 0 || tc.log_every == 0 {
        return Err(LmError::Config("batch size and log interval must be positive".into()));
    }
    let starts = sequence_starts(streams, tc.seq_tokens + 1, w_tok);
    if starts.is_empty() {
        return Err(LmError::Context(format!(
            "no stream holds {} tokens",
            tc.seq_tokens + 1
        )));
    }
    let mut lm = Lm::init(config.clone(), tc.seed)?;
    let mut opt = AdamW::new(tc.optim.clone());
    let mut rng = SeededRng::named(tc.seed, "flatgpt/train");
    let mut log = Vec::new();
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    let (mut acc, mut acc_n) = (0.0f64, 0usize);
    for step in 0..tc.steps {
        let mut tape = Tape::new();
        let b = lm.params.bind(&mut tape);
        let mut total = None;
        for _ in 0..tc.batch_size {
            let (s, st) = starts[rng.below(starts.len())];
            let seq = &streams[s][st..st + tc.seq_tokens + 1];
            let logits = lm.forward_var(&mut tape, &b, &seq[..tc.seq_tokens])?;
            let targets: Vec<usize> = seq[1..].iter().map(|&v| v as usize).collect();
            let ce = tape.cross_entropy(logits, &targets)?;
            total = Some(match total {
                None => ce,
                Some(t) => tape.add(t, ce)?,
            });
        }
        let loss = tape.scale(total.expect("batch is non-empty"), 1.0 / tc.batch_size as f64);
        let value = tape.value(loss).item() as f64;
        if !value.is_finite() {
            let last = checkpoints
                .last()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "none".into());
            return Err(LmError::NonFinite(format!(
                "loss {value} at step {step}; last checkpoint: {last}"
            )));
        }
        tape.backward(loss)?;
        let stats = opt.step(&mut lm.params, &b.grads(&tape))?;
        acc += value;
        acc_n += 1;
        if (step + 1) % tc.log_every == 0 || step + 1 == tc.steps {
            log.push(LmLogEntry {
                step: stats.step,
                lr: stats.lr,
                bits_per_token: acc / acc_n as f64 / std::f64::consts::LN_2,
                grad_norm: stats.grad_norm,
            });
            (acc, acc_n) = (0.0, 0);
            if let Some(dir) = checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("lm-s{:06}.btck", step + 1));
                lm.save(&path, Some(&opt))?;
                checkpoints.push(path);
            }
        }
    }
    Ok(LmOutcome {
        lm,
        optimizer: opt,
        log,
        checkpoints,
    })
}

/// Teacher-forced bits per token by position: entry `j` is the mean over
/// sequences of the cost of predicting token `j + 1` from tokens `0..=j`.
/// Streams are cut into consecutive window-aligned sequences of `len`
/// tokens; the curve has `len − 1` entries.
pub fn loss_vs_context(lm: &Lm, streams: &[Vec<u32>], len: usize) -> Result<Vec<f64>> {
    let c = &lm.config;
    if len < 2 || len > c.max_context || len % c.window_tokens() != 0 {
        return Err(LmError::Config(format!(
            "curve length {len} must be a multiple of {} within the context",
            c.window_tokens()
        )));
    }
    let mut sum = vec![0.0f64; len - 1];
    let mut count = 0usize;
    for toks in streams {
        for seq in toks.chunks_exact(len) {
            let mut dec = Decoder::new(lm);
            let logits = dec.feed(&seq[..len - 1])?;
            for (j, row) in logits.chunks(c.vocab).enumerate() {
                sum[j] += nll(row, seq[j + 1] as usize) / std::f64::consts::LN_2;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(LmError::Context(format!("no evaluation stream holds {len} tokens")));
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

fn nll(row: &[f32], target: usize) -> f64 {
    let mx = row.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&v| (v as f64 - mx).exp()).sum::<f64>().ln() + mx;
    lse - row[target] as f64
}
