use diffcore::SeededRng;
use megsynth::TaskType;
use serde::{Deserialize, Serialize};

use crate::divergence::{DivMetric, DivergenceCurves, Pairing};
use crate::error::{EvalError, Result};
use crate::stats::{bootstrap_ci, median, wilcoxon_signed_rank};

/// Paired comparison of one control against the correct pairing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub task: TaskType,
    pub metric: DivMetric,
    pub control: Pairing,
    pub tau_s: f64,
    pub n: usize,
    /// `median(control − correct)` over contexts.
    pub delta: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    /// Two-sided Wilcoxon signed-rank p.
    pub p: Option<f64>,
    /// Why a statistic is missing, empty otherwise.
    pub note: String,
}

/// Paired medians `Δ = control − correct` with bootstrap intervals and
/// Wilcoxon p-values for every metric and control at prefix `tau_index`.
/// Bootstrap streams are derived from `seed` per row.
pub fn specificity_summary(
    task: TaskType,
    curves: &DivergenceCurves,
    tau_index: usize,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<StatRow>> {
    let tau_s = *curves
        .taus
        .get(tau_index)
        .ok_or_else(|| EvalError::Config(format!("prefix index {tau_index} beyond {} times", curves.taus.len())))?;
    let mut rows = Vec::new();
    for mc in &curves.metrics {
        for control in Pairing::CONTROLS {
            let diffs: Vec<f64> = mc
                .get(control)
                .iter()
                .zip(&mc.correct)
                .map(|(c, r)| c[tau_index] - r[tau_index])
                .collect();
            let label = format!("stresslab/summary/{}/{}/{}", task.name(), mc.metric.name(), control.name());
            let mut notes = Vec::new();
            let (ci_lo, ci_hi) = match bootstrap_ci(&diffs, n_boot, SeededRng::named(seed, &label).next_u64()) {
                Ok(ci) => (Some(ci.lo), Some(ci.hi)),
                Err(e) => {
                    notes.push(e.to_string());
                    (None, None)
                }
            };
            let p = if diffs.iter().all(|&d| d == 0.0) {
                notes.push("no separation".into());
                None
            } else {
                match wilcoxon_signed_rank(&diffs) {
                    Ok(w) => Some(w.p),
                    Err(e) => {
                        notes.push(e.to_string());
                        None
                    }
                }
            };
            rows.push(StatRow {
                task,
                metric: mc.metric,
                control,
                tau_s,
                n: diffs.len(),
                delta: if diffs.is_empty() { 0.0 } else { median(&diffs) },
                ci_lo,
                ci_hi,
                p,
                note: notes.join("; "),
            });
        }
    }
    Ok(rows)
}
