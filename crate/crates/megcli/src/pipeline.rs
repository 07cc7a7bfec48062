use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use flatgpt::{flatten, loss_vs_context, train_lm, Lm};
use megsynth::{build_corpus, preprocess, read_recording, CorpusManifest, Recording, Split};
use rayon::prelude::*;
use rollgen::{rollout_batch, BatchManifest};
use serde::{Deserialize, Serialize};
use stresslab::{evaluate, render_csvs, Continuation, EvalReport};
use tokmix::{tokenize_segment, train_tokenizer, windows_of, TokenGrid, Tokenizer};

use crate::config::{Preset, RunConfig};
use crate::manifest::{hash_tree, sha256_bytes, stale_files, RunManifest, StageRecord};
use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenData,
    TrainTokenizer,
    Tokenize,
    TrainLm,
    Rollout,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::GenData,
        Stage::TrainTokenizer,
        Stage::Tokenize,
        Stage::TrainLm,
        Stage::Rollout,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainTokenizer => "train-tokenizer",
            Stage::Tokenize => "tokenize",
            Stage::TrainLm => "train-lm",
            Stage::Rollout => "rollout",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// Directory under the run directory holding the stage's outputs.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::GenData => "corpus",
            Stage::TrainTokenizer => "tokenizer",
            Stage::Tokenize => "tokens",
            Stage::TrainLm => "lm",
            Stage::Rollout => "rollouts",
            Stage::Evaluate => "eval",
            Stage::Report => "report",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn inputs(self) -> &'static [Stage] {
        match self {
            Stage::GenData => &[],
            Stage::TrainTokenizer => &[Stage::GenData],
            Stage::Tokenize => &[Stage::GenData, Stage::TrainTokenizer],
            Stage::TrainLm => &[Stage::TrainTokenizer, Stage::Tokenize],
            Stage::Rollout => &[Stage::GenData, Stage::TrainTokenizer, Stage::TrainLm],
            Stage::Evaluate => &[Stage::Rollout],
            Stage::Report => &[Stage::Evaluate],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    /// Config, inputs and outputs all matched the manifest.
    Skipped,
}

/// One tokenized segment under `tokens/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentIndex {
    pub session: String,
    pub split: Split,
    pub segment: usize,
    pub rows: usize,
    pub dropped_samples: usize,
    pub file: String,
}

/// Held-out bits per token by context position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextCurve {
    pub tokens: usize,
    pub bits: Vec<f64>,
    pub first_decile: f64,
    pub last_decile: f64,
}

impl ContextCurve {
    pub fn new(bits: Vec<f64>) -> Self {
        let d = (bits.len() / 10).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Self {
            tokens: bits.len() + 1,
            first_decile: mean(&bits[..d]),
            last_decile: mean(&bits[bits.len() - d..]),
            bits,
        }
    }
}

pub struct Pipeline {
    pub config: RunConfig,
    pub force: bool,
    /// Progress lines go to stderr unless silenced.
    pub quiet: bool,
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            force: false,
            quiet: false,
        }
    }

    pub fn out(&self) -> &Path {
        &self.config.out_dir
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// The part of the config a stage depends on, hashed into its record.
    fn stage_config(&self, stage: Stage) -> Result<String> {
        let c = &self.config;
        Ok(match stage {
            Stage::GenData => json(&(&c.corpus, c.corpus_seed()))?,
            Stage::TrainTokenizer => json(&(&c.tokenizer, &c.corpus.config.clean))?,
            Stage::Tokenize => json(&c.corpus.config.clean)?,
            Stage::TrainLm => json(&c.lm)?,
            Stage::Rollout => json(&c.rollout)?,
            Stage::Evaluate => json(&c.eval)?,
            Stage::Report => String::new(),
        })
    }

    pub fn run(&self, stage: Stage) -> Result<StageStatus> {
        if self.config.preset == Preset::PaperDoc {
            return Err(UsageError(format!(
                "preset paper-doc documents the full-scale settings and never runs `{}`; use preset desk",
                stage.name()
            ))
            .into());
        }
        let out = self.out().to_path_buf();
        let mut manifest = RunManifest::load(&out)?;
        let mut inputs = std::collections::BTreeMap::new();
        for pred in stage.inputs() {
            let rec = manifest.stages.get(pred.name()).ok_or_else(|| {
                UsageError(format!(
                    "`{}` needs the outputs of `{}`; run `megcli {}` first",
                    stage.name(),
                    pred.name(),
                    pred.name()
                ))
            })?;
            let stale = stale_files(&out, &rec.outputs);
            if !stale.is_empty() {
                return Err(UsageError(format!(
                    "outputs of `{}` changed or went missing ({}); rerun `megcli {}`",
                    pred.name(),
                    stale.join(", "),
                    pred.name()
                ))
                .into());
            }
            inputs.extend(rec.outputs.clone());
        }
        let config_hash = sha256_bytes(self.stage_config(stage)?.as_bytes());
        if let Some(rec) = manifest.stages.get(stage.name()) {
            if rec.config_hash != config_hash && !self.force {
                return Err(UsageError(format!(
                    "config for `{}` changed since its outputs were written; pass --force to rebuild",
                    stage.name()
                ))
                .into());
            }
            if rec.config_hash == config_hash && rec.inputs == inputs && stale_files(&out, &rec.outputs).is_empty() {
                self.say(format!("{}: up to date, skipped", stage.name()));
                return Ok(StageStatus::Skipped);
            }
        }
        let dir = out.join(stage.dir());
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        self.say(format!("{}: running", stage.name()));
        match stage {
            Stage::GenData => self.gen_data(&dir)?,
            Stage::TrainTokenizer => self.train_tokenizer(&dir)?,
            Stage::Tokenize => self.tokenize(&dir)?,
            Stage::TrainLm => self.train_lm(&dir)?,
            Stage::Rollout => self.rollout(&dir)?,
            Stage::Evaluate => self.evaluate(&dir)?,
            Stage::Report => {
                render_report(&EvalReport::from_json(&read(&out.join("eval/report.json"))?)?, &dir)?;
            }
        }
        manifest.config_hash = sha256_bytes(self.config.to_json().as_bytes());
        manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                config_hash,
                inputs,
                outputs: hash_tree(&out, stage.dir())?,
                completed_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            },
        );
        manifest.save(&out)?;
        std::fs::write(out.join("config.json"), self.config.to_json())?;
        Ok(StageStatus::Ran)
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, StageStatus)>> {
        Stage::ALL.iter().map(|&s| Ok((s, self.run(s)?))).collect()
    }

    fn corpus_dir(&self) -> PathBuf {
        self.out().join(Stage::GenData.dir())
    }

    /// Preprocessed segments per session of one split, in manifest order.
    fn segments(&self, split: Split) -> Result<Vec<(String, Vec<Recording>)>> {
        let dir = self.corpus_dir();
        let m = CorpusManifest::load(&dir)?;
        let entries: Vec<_> = m.split(split).collect();
        entries
            .par_iter()
            .map(|e| {
                let rec = read_recording(&dir.join(&e.path))?;
                Ok((e.session.clone(), preprocess(&rec, &self.config.corpus.config.clean)))
            })
            .collect()
    }

    fn tokenizer(&self) -> Result<Tokenizer> {
        let p = self.out().join("tokenizer/tokenizer.btck");
        Tokenizer::load(&p).with_context(|| format!("loading {}", p.display()))
    }

    fn gen_data(&self, dir: &Path) -> Result<()> {
        let c = &self.config.corpus;
        let m = build_corpus(dir, c.n_train, c.n_eval, &c.config, self.config.corpus_seed())?;
        self.say(format!("  {} sessions", m.entries.len()));
        Ok(())
    }

    fn train_tokenizer(&self, dir: &Path) -> Result<()> {
        let t = &self.config.tokenizer;
        let flat = |s: Vec<(String, Vec<Recording>)>| -> Vec<Recording> { s.into_iter().flat_map(|(_, r)| r).collect() };
        let train = windows_of(&flat(self.segments(Split::Train)?), t.model.window);
        let eval = windows_of(&flat(self.segments(Split::Eval)?), t.model.window);
        self.say(format!("  {} training windows, {} held-out", train.len(), eval.len()));
        let out = train_tokenizer(&t.model, &train, &eval, &t.train, Some(&dir.join("ckpt")))?;
        if let Some(d) = out.log.last().and_then(|l| l.eval.as_ref()) {
            self.say(format!("  held-out pcc {:.3} mae {:.3}", d.pcc, d.mae));
        }
        out.tokenizer.save(&dir.join("tokenizer.btck"), None)?;
        std::fs::write(dir.join("log.json"), json(&out.log)?)?;
        Ok(())
    }

    fn tokenize(&self, dir: &Path) -> Result<()> {
        let tok = self.tokenizer()?;
        let mut index = Vec::new();
        for split in [Split::Train, Split::Eval] {
            let segs = self.segments(split)?;
            let done: Vec<Vec<SegmentIndex>> = segs
                .par_iter()
                .map(|(session, recs)| {
                    recs.iter()
                        .enumerate()
                        .filter(|(_, r)| r.samples() >= tok.config.window)
                        .map(|(k, r)| {
                            let t = tokenize_segment(r, &tok)?;
                            let file = format!("{session}.s{k}.megt");
                            t.grid.write(&dir.join(&file))?;
                            Ok(SegmentIndex {
                                session: session.clone(),
                                split,
                                segment: k,
                                rows: t.grid.rows,
                                dropped_samples: t.dropped_samples,
                                file,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            index.extend(done.into_iter().flatten());
        }
        std::fs::write(dir.join("index.json"), json(&index)?)?;
        Ok(())
    }

    /// Flattened token streams of one split from `tokens/`.
    pub fn streams(&self, split: Split) -> Result<Vec<Vec<u32>>> {
        let dir = self.out().join(Stage::Tokenize.dir());
        let index: Vec<SegmentIndex> = serde_json::from_str(&read(&dir.join("index.json"))?)?;
        index
            .iter()
            .filter(|s| s.split == split)
            .map(|s| Ok(flatten(&TokenGrid::read(&dir.join(&s.file))?).tokens))
            .collect()
    }

    fn train_lm(&self, dir: &Path) -> Result<()> {
        let l = &self.config.lm;
        let train = self.streams(Split::Train)?;
        let eval = self.streams(Split::Eval)?;
        self.say(format!(
            "  {} training tokens, {} steps",
            train.iter().map(Vec::len).sum::<usize>(),
            l.train.steps
        ));
        let out = train_lm(&l.model, &train, &l.train, Some(&dir.join("ckpt")))?;
        if let Some(e) = out.log.last() {
            self.say(format!("  final {:.3} bits/token", e.bits_per_token));
        }
        out.lm.save(&dir.join("lm.btck"), None)?;
        std::fs::write(dir.join("log.json"), json(&out.log)?)?;
        let curve = ContextCurve::new(loss_vs_context(&out.lm, &eval, l.curve_tokens)?);
        std::fs::write(dir.join("context_curve.json"), json(&curve)?)?;
        Ok(())
    }

    fn rollout(&self, dir: &Path) -> Result<()> {
        let tok = self.tokenizer()?;
        let lm = Lm::load(&self.out().join("lm/lm.btck"))?;
        let r = &self.config.rollout;
        let b = rollout_batch(&self.corpus_dir(), r.task, &tok, &lm, &r.config, dir)?;
        self.say(format!("  {} rollouts, {} sessions skipped", b.pairs.len(), b.skipped.len()));
        Ok(())
    }

    fn evaluate(&self, dir: &Path) -> Result<()> {
        let roll = self.out().join(Stage::Rollout.dir());
        let pairs = BatchManifest::load(&roll)?.load_pairs(&roll)?;
        let runs: Vec<Continuation> = pairs
            .into_iter()
            .map(|p| Continuation {
                session: p.meta.session,
                task: p.meta.task,
                real: p.real,
                generated: p.generated,
            })
            .collect();
        let report = evaluate(&runs, &self.config.eval)?;
        std::fs::write(dir.join("report.json"), report.to_json()?)?;
        Ok(())
    }
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

/// Writes the plot-data CSVs of `report` into `dir`.
pub fn render_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    render_csvs(report)
        .into_iter()
        .map(|(name, body)| {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            Ok(p)
        })
        .collect()
}
