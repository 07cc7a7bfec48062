use std::path::{Path, PathBuf};

use diffcore::{checkpoint, AdamW, AdamWConfig, DftBasis, SeededRng, Tape, Tensor};
use megsynth::Recording;
use serde::{Deserialize, Serialize};

use crate::config::TokenizerConfig;
use crate::diagnostics::{tokenizer_diagnostics, Diagnostics};
use crate::error::{Result, TokError};
use crate::loss::{commit_loss, tokenizer_loss, LossParts};
use crate::model::Tokenizer;
use crate::rvq::{perplexity, CodebookSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            epochs: 12,
            batch_size: 16,
            optim: AdamWConfig {
                lr: 2e-3,
                weight_decay: 1e-2,
                warmup_steps: 300,
                clip_norm: Some(1.0),
                ..AdamWConfig::default()
            },
            seed,
        }
    }

    /// Published full-scale schedule: 20 epochs of 480-window batches.
    pub fn paper(seed: u64) -> Self {
        Self {
            epochs: 20,
            batch_size: 480,
            optim: AdamWConfig {
                lr: 5e-5,
                weight_decay: 1e-2,
                warmup_steps: 300,
                clip_norm: Some(1.0),
                ..AdamWConfig::default()
            },
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub lr: f64,
    /// Batch-averaged training objective.
    pub train: LossParts,
    /// Held-out diagnostics after the epoch, when held-out windows exist.
    pub eval: Option<Diagnostics>,
    /// Training code-usage perplexity per level, before reseeding.
    pub train_perplexity: Vec<f64>,
    pub reseeded: Vec<usize>,
}

pub struct TrainOutcome {
    pub tokenizer: Tokenizer,
    pub optimizer: AdamW,
    pub log: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
}

/// Cuts every recording into non-overlapping channel-major `C × L_w`
/// windows, dropping each tail.
pub fn windows_of(recs: &[Recording], window: usize) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    for r in recs {
        for w in 0..r.samples() / window {
            out.push(r.slice(w * window, window).data);
        }
    }
    out
}

impl Tokenizer {
    /// Parameters, optimizer state and codebooks as `BTCK` entries.
    pub fn entries(&self, opt: Option<&AdamW>) -> Vec<(String, Tensor<f32>)> {
        let mut e = checkpoint::bundle(&self.params, opt);
        e.extend(self.books.entries());
        e
    }

    /// Writes `path` (`BTCK`) and the config beside it as `path.json`.
    pub fn save(&self, path: &Path, opt: Option<&AdamW>) -> Result<()> {
        checkpoint::write(path, &self.entries(opt))?;
        std::fs::write(config_path(path), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: TokenizerConfig = serde_json::from_str(&std::fs::read_to_string(config_path(path))?)?;
        config.validate()?;
        let entries = checkpoint::read(path)?;
        let books = CodebookSet::from_entries(&entries, config.levels, config.codebook_size, config.code_dim())?;
        let rest: Vec<_> = entries.into_iter().filter(|(n, _)| !n.starts_with("rvq.")).collect();
        let (params, _) = checkpoint::unbundle(rest, AdamWConfig::default())?;
        let fresh = Tokenizer::init(config.clone(), 0)?;
        for (name, t) in fresh.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(TokError::Shape(format!(
                    "`{name}` has shape {:?}, config implies {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params, books })
    }
}

fn config_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Trains encoder and decoder by AdamW on the reconstruction objective and
/// the codebooks by EMA, reseeding unused codes after each epoch. With
/// `checkpoint_dir` set, writes `tokenizer-eNNN.btck` after every epoch.
pub fn train_tokenizer(
    config: &TokenizerConfig,
    train: &[Vec<f32>],
    eval: &[Vec<f32>],
    tc: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(TokError::Length("no training windows".into()));
    }
    if tc.batch_size == 0 {
        return Err(TokError::Config("batch size must be positive".into()));
    }
    let mut tok = Tokenizer::init(config.clone(), tc.seed)?;
    let mut opt = AdamW::new(tc.optim.clone());
    let mut rng = SeededRng::named(tc.seed, "tokmix/train");
    let basis = DftBasis::<f32>::new(config.window);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut checkpoints: Vec<PathBuf> = Vec::new();

    for epoch in 1..=tc.epochs {
        rng.shuffle(&mut order);
        let mut sum = LossParts::default();
        let mut batches = 0usize;
        let mut last_q = None;
        for idx in order.chunks(tc.batch_size) {
            let n = idx.len();
            let data: Vec<f32> = idx.iter().flat_map(|&i| train[i].iter().copied()).collect();
            let mut tape = Tape::new();
            let b = tok.params.bind(&mut tape);
            let x = tape.constant(Tensor::new(&[n, config.channels, config.window], data)?);
            let z = tok.encode_var(&mut tape, &b, x)?;
            if !tok.books.initialized {
                tok.books.init_from(tape.value(z).data(), &mut rng);
            }
            let qz = tok.books.quantize(tape.value(z).data())?;
            let zq = tape.straight_through(z, Tensor::new(tape.shape(z), qz.zq.clone())?)?;
            let commit = commit_loss(&mut tape, z, zq)?;
            let x_hat = tok.decode_var(&mut tape, &b, zq, n)?;
            let loss = tokenizer_loss(&mut tape, x, x_hat, commit, &basis)?;
            if !loss.parts.total.is_finite() {
                let last = checkpoints
                    .last()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "none".into());
                return Err(TokError::NonFinite(format!(
                    "loss {} at epoch {epoch}, step {}; last checkpoint: {last}",
                    loss.parts.total,
                    opt.steps()
                )));
            }
            tape.backward(loss.total)?;
            let grads = b.grads(&tape);
            opt.step(&mut tok.params, &grads)?;
            tok.books.ema_update(&qz, config.ema_decay);
            accumulate(&mut sum, &loss.parts);
            batches += 1;
            last_q = Some(qz);
        }
        let train_perplexity = tok.books.usage.iter().map(|u| perplexity(u)).collect();
        let reseeded = match &last_q {
            Some(q) => tok.books.reseed_dead(q, &mut rng),
            None => vec![0; config.levels],
        };
        let eval_diag = if eval.is_empty() {
            None
        } else {
            Some(tokenizer_diagnostics(&tok, eval, tc.batch_size)?)
        };
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("tokenizer-e{epoch:03}.btck"));
            tok.save(&path, Some(&opt))?;
            checkpoints.push(path);
        }
        log.push(EpochLog {
            epoch,
            steps: opt.steps(),
            lr: opt.lr_at(opt.steps().saturating_sub(1)),
            train: scale_parts(&sum, 1.0 / batches as f64),
            eval: eval_diag,
            train_perplexity,
            reseeded,
        });
    }
    Ok(TrainOutcome {
        tokenizer: tok,
        optimizer: opt,
        log,
        checkpoints,
    })
}

fn accumulate(acc: &mut LossParts, p: &LossParts) {
    acc.total += p.total;
    acc.l1 += p.l1;
    acc.pcc += p.pcc;
    acc.commit += p.commit;
    acc.amp += p.amp;
    acc.phase += p.phase;
    acc.degenerate_rows += p.degenerate_rows;
}

fn scale_parts(p: &LossParts, s: f64) -> LossParts {
    LossParts {
        total: p.total * s,
        l1: p.l1 * s,
        pcc: p.pcc * s,
        commit: p.commit * s,
        amp: p.amp * s,
        phase: p.phase * s,
        degenerate_rows: p.degenerate_rows,
    }
}
