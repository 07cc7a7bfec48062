use megsynth::{Recording, TaskType};
use neurometrics::{stft_frames, WelchConfig};
use serde::{Deserialize, Serialize};

use crate::divergence::{prefix_divergence, DivergenceCurves};
use crate::error::{EvalError, Result};
use crate::partner::PartnerMap;
use crate::stability::{stability_curves, StabilityCurves, MIN_REAL_RUNS};
use crate::summary::{specificity_summary, StatRow};
use crate::window::WindowGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub window_s: f64,
    pub stride_s: f64,
    /// Requested prefix times; clipped to the horizon, which is always added.
    pub taus: Vec<f64>,
    pub welch: WelchConfig,
    pub n_boot: usize,
    pub seed: u64,
    /// Seconds of the first pair exported for qualitative plots.
    pub qualitative_s: f64,
}

impl EvalConfig {
    /// Scaled to a 40.96 s horizon.
    pub fn desk(seed: u64) -> Self {
        Self {
            window_s: 10.0,
            stride_s: 2.5,
            taus: vec![5.0, 10.0, 15.0, 20.0, 30.0, 40.96],
            welch: WelchConfig::default(),
            n_boot: 5000,
            seed,
            qualitative_s: 10.0,
        }
    }

    /// Full-scale protocol: 30 s windows every 5 s.
    pub fn paper(seed: u64) -> Self {
        Self {
            window_s: 30.0,
            stride_s: 5.0,
            taus: vec![20.0, 40.0, 60.0, 80.0, 100.0, 150.0, 200.0, 250.0],
            welch: WelchConfig::default(),
            n_boot: 5000,
            seed,
            qualitative_s: 30.0,
        }
    }
}

/// A real continuation and the model's continuation of the same context.
#[derive(Clone, Debug)]
pub struct Continuation {
    pub session: String,
    pub task: TaskType,
    pub real: Recording,
    pub generated: Recording,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskType,
    pub sessions: Vec<String>,
    /// Absent when the task has too few runs for an envelope.
    pub stability: Option<StabilityCurves>,
    pub divergence: DivergenceCurves,
    /// Statistics at the longest prefix.
    pub summary: Vec<StatRow>,
    pub notes: Vec<String>,
}

/// One channel of the first pair plus its short-time spectra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Qualitative {
    pub session: String,
    pub channel: usize,
    pub fs: f64,
    pub real: Vec<f64>,
    pub generated: Vec<f64>,
    pub stft_win_s: f64,
    pub stft_hop_s: f64,
    pub stft_real: Vec<Vec<f64>>,
    pub stft_generated: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub tasks: Vec<TaskReport>,
    pub qualitative: Option<Qualitative>,
}

impl EvalReport {
    pub fn task(&self, t: TaskType) -> Option<&TaskReport> {
        self.tasks.iter().find(|r| r.task == t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

const STFT_WIN_S: f64 = 1.0;
const STFT_HOP_S: f64 = 0.25;

fn qualitative(c: &Continuation, seconds: f64) -> Qualitative {
    let fs = c.real.fs as f64;
    let n = ((seconds * fs).round() as usize).min(c.real.samples()).min(c.generated.samples());
    let real: Vec<f64> = c.real.channel(0)[..n].iter().map(|&v| v as f64).collect();
    let generated: Vec<f64> = c.generated.channel(0)[..n].iter().map(|&v| v as f64).collect();
    Qualitative {
        session: c.session.clone(),
        channel: 0,
        fs,
        stft_real: stft_frames(&real, fs, STFT_WIN_S, STFT_HOP_S),
        stft_generated: stft_frames(&generated, fs, STFT_WIN_S, STFT_HOP_S),
        stft_win_s: STFT_WIN_S,
        stft_hop_s: STFT_HOP_S,
        real,
        generated,
    }
}

/// Runs the full protocol separately for each task: stability envelopes,
/// prefix divergence under within-task partners, and paired statistics at
/// the longest prefix. Tasks with a single context are skipped.
pub fn evaluate(runs: &[Continuation], cfg: &EvalConfig) -> Result<EvalReport> {
    if runs.is_empty() {
        return Err(EvalError::Protocol("no continuations to evaluate".into()));
    }
    let mut tasks = Vec::new();
    for task in TaskType::ALL {
        let group: Vec<&Continuation> = runs.iter().filter(|c| c.task == task).collect();
        if group.len() < 2 {
            continue;
        }
        let real: Vec<Recording> = group.iter().map(|c| c.real.clone()).collect();
        let generated: Vec<Recording> = group.iter().map(|c| c.generated.clone()).collect();
        let labels = vec![task; group.len()];
        let mut notes = Vec::new();
        let horizon = real
            .iter()
            .chain(&generated)
            .map(|r| r.duration_s())
            .fold(f64::INFINITY, f64::min);
        let stability = if real.len() >= MIN_REAL_RUNS {
            let grid = WindowGrid::new(horizon, cfg.window_s, cfg.stride_s)?;
            Some(stability_curves(&real, &generated, &grid, &cfg.welch)?)
        } else {
            notes.push(format!(
                "stability skipped: {} runs, envelopes need {MIN_REAL_RUNS}",
                real.len()
            ));
            None
        };
        let partner = PartnerMap::within_tasks(&labels, cfg.seed)?;
        let divergence = prefix_divergence(&real, &generated, &partner, &labels, &cfg.taus, &cfg.welch)?;
        for t in &divergence.clipped {
            notes.push(format!("prefix {t} s beyond the {horizon} s horizon was dropped"));
        }
        let summary = specificity_summary(task, &divergence, divergence.taus.len() - 1, cfg.n_boot, cfg.seed)?;
        tasks.push(TaskReport {
            task,
            sessions: group.iter().map(|c| c.session.clone()).collect(),
            stability,
            divergence,
            summary,
            notes,
        });
    }
    if tasks.is_empty() {
        return Err(EvalError::Protocol("no task has two or more contexts".into()));
    }
    Ok(EvalReport {
        config: cfg.clone(),
        tasks,
        qualitative: Some(qualitative(&runs[0], cfg.qualitative_s)),
    })
}
