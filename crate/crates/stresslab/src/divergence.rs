use megsynth::Recording;
use nalgebra::DMatrix;
use neurometrics::{
    coherence_matrix, covariance_matrix, matrix_distance, psd_jsd, welch_psd, PsdEstimate, WelchConfig,
    SUMMARY_BAND,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::partner::PartnerMap;

/// Distances between prefix features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivMetric {
    PsdJsd,
    Covariance,
    Coherence,
}

impl DivMetric {
    pub const ALL: [DivMetric; 3] = [DivMetric::PsdJsd, DivMetric::Covariance, DivMetric::Coherence];

    pub fn name(self) -> &'static str {
        match self {
            DivMetric::PsdJsd => "psd_jsd",
            DivMetric::Covariance => "covariance",
            DivMetric::Coherence => "coherence",
        }
    }
}

/// Which two continuations a distance compares, for context `i` and its
/// partner `π(i)`: `x` generated, `y` real.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// `(x_i, y_i)`
    Correct,
    /// `(x_π(i), y_i)`
    PromptSwap,
    /// `(x_i, y_π(i))`
    TargetSwap,
    /// `(y_π(i), y_i)`
    RealReal,
}

impl Pairing {
    pub const ALL: [Pairing; 4] = [Pairing::Correct, Pairing::PromptSwap, Pairing::TargetSwap, Pairing::RealReal];
    pub const CONTROLS: [Pairing; 3] = [Pairing::PromptSwap, Pairing::TargetSwap, Pairing::RealReal];

    pub fn name(self) -> &'static str {
        match self {
            Pairing::Correct => "correct",
            Pairing::PromptSwap => "prompt_swap",
            Pairing::TargetSwap => "target_swap",
            Pairing::RealReal => "real_real",
        }
    }
}

/// Distances `values[pairing][context][τ]` for one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCurves {
    pub metric: DivMetric,
    pub correct: Vec<Vec<f64>>,
    pub prompt_swap: Vec<Vec<f64>>,
    pub target_swap: Vec<Vec<f64>>,
    pub real_real: Vec<Vec<f64>>,
}

impl MetricCurves {
    pub fn get(&self, p: Pairing) -> &Vec<Vec<f64>> {
        match p {
            Pairing::Correct => &self.correct,
            Pairing::PromptSwap => &self.prompt_swap,
            Pairing::TargetSwap => &self.target_swap,
            Pairing::RealReal => &self.real_real,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCurves {
    pub taus: Vec<f64>,
    /// Requested prefix times beyond the horizon that were dropped.
    pub clipped: Vec<f64>,
    pub sessions: Vec<String>,
    pub partner: PartnerMap,
    pub metrics: Vec<MetricCurves>,
}

impl DivergenceCurves {
    pub fn metric(&self, m: DivMetric) -> Option<&MetricCurves> {
        self.metrics.iter().find(|c| c.metric == m)
    }
}

/// Prefix times at or below `horizon_s`, always ending at the horizon.
/// Returns the grid and the dropped times.
pub fn tau_grid(requested: &[f64], horizon_s: f64) -> (Vec<f64>, Vec<f64>) {
    let (mut keep, clipped): (Vec<f64>, Vec<f64>) =
        requested.iter().copied().filter(|t| *t > 0.0).partition(|&t| t <= horizon_s + 1e-9);
    keep.push(horizon_s);
    keep.sort_by(f64::total_cmp);
    keep.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    (keep, clipped)
}

struct PrefixFeatures {
    psd: PsdEstimate,
    cov: DMatrix<f64>,
    coh: DMatrix<f64>,
}

fn prefix_features(rec: &Recording, tau: f64, welch: &WelchConfig) -> Result<PrefixFeatures> {
    let fs = rec.fs as f64;
    let n = ((tau * fs).round() as usize).min(rec.samples());
    let rows: Vec<Vec<f64>> = (0..rec.channels)
        .map(|c| rec.channel(c)[..n].iter().map(|&v| v as f64).collect())
        .collect();
    Ok(PrefixFeatures {
        psd: welch_psd(&rows, fs, welch)?,
        cov: covariance_matrix(&rows)?,
        coh: coherence_matrix(&rows, fs, welch, SUMMARY_BAND)?,
    })
}

fn distance(m: DivMetric, a: &PrefixFeatures, b: &PrefixFeatures) -> Result<f64> {
    Ok(match m {
        DivMetric::PsdJsd => psd_jsd(&a.psd, &b.psd)?,
        DivMetric::Covariance => matrix_distance(&a.cov, &b.cov)?,
        DivMetric::Coherence => matrix_distance(&a.coh, &b.coh)?,
    })
}

/// Distances between the first `τ` seconds of continuations under the
/// correct pairing and the three partner controls, for every context and
/// prefix time. Context samples are never included.
pub fn prefix_divergence(
    real: &[Recording],
    generated: &[Recording],
    partner: &PartnerMap,
    tasks: &[megsynth::TaskType],
    taus: &[f64],
    welch: &WelchConfig,
) -> Result<DivergenceCurves> {
    let n = real.len();
    if generated.len() != n || tasks.len() != n {
        return Err(EvalError::Protocol(format!(
            "{n} real, {} generated continuations and {} task labels",
            generated.len(),
            tasks.len()
        )));
    }
    partner.validate(tasks)?;
    let horizon = real
        .iter()
        .chain(generated)
        .map(|r| r.duration_s())
        .fold(f64::INFINITY, f64::min);
    let (grid, clipped) = tau_grid(taus, horizon);

    let nt = grid.len();
    let cells: Vec<(usize, bool, usize)> = (0..n)
        .flat_map(|i| [false, true].into_iter().flat_map(move |g| (0..nt).map(move |t| (i, g, t))))
        .collect();
    let feats: Vec<PrefixFeatures> = cells
        .par_iter()
        .map(|&(i, g, t)| prefix_features(if g { &generated[i] } else { &real[i] }, grid[t], welch))
        .collect::<Result<_>>()?;
    let x = |i: usize, t: usize| &feats[(i * 2 + 1) * nt + t];
    let y = |i: usize, t: usize| &feats[(i * 2) * nt + t];

    let mut metrics = Vec::new();
    for m in DivMetric::ALL {
        let mut c = MetricCurves {
            metric: m,
            correct: vec![vec![0.0; nt]; n],
            prompt_swap: vec![vec![0.0; nt]; n],
            target_swap: vec![vec![0.0; nt]; n],
            real_real: vec![vec![0.0; nt]; n],
        };
        for i in 0..n {
            let j = partner.partner[i];
            for t in 0..nt {
                c.correct[i][t] = distance(m, x(i, t), y(i, t))?;
                c.prompt_swap[i][t] = distance(m, x(j, t), y(i, t))?;
                // Partner-real first, matching the real-real argument order,
                // so both agree bit for bit when generated equals real.
                c.target_swap[i][t] = distance(m, y(j, t), x(i, t))?;
                c.real_real[i][t] = distance(m, y(j, t), y(i, t))?;
            }
        }
        metrics.push(c);
    }
    Ok(DivergenceCurves {
        taus: grid,
        clipped,
        sessions: real.iter().map(|r| r.session_id.clone()).collect(),
        partner: partner.clone(),
        metrics,
    })
}
