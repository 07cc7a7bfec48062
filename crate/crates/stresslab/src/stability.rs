use megsynth::{quantile_sorted, Recording};
use neurometrics::{
    band_features, covariance_matrix, dfa_hurst, eig_entropy, one_over_f_exponent, welch_psd, MetricKind,
    WelchConfig, HEADLINE, ONE_OVER_F_BAND,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::stats::sorted;
use crate::window::WindowGrid;

pub const MIN_REAL_RUNS: usize = 4;

/// Scalar features of one window in `MetricKind::ALL` order. Features
/// that cannot be computed (a flat signal has no spectrum to fit) are NaN.
pub fn scalar_features(x: &[Vec<f64>], fs: f64, welch: &WelchConfig) -> [f64; 10] {
    let mut out = [f64::NAN; 10];
    let set = |out: &mut [f64; 10], m: MetricKind, v: f64| {
        out[MetricKind::ALL.iter().position(|&k| k == m).unwrap()] = v;
    };
    if let Ok(psd) = welch_psd(x, fs, welch) {
        let mean = psd.channel_mean();
        let b = band_features(&psd.freqs, &mean);
        set(&mut out, MetricKind::PsdCentroid, b.centroid);
        set(&mut out, MetricKind::AlphaRatio, b.alpha_ratio);
        for (m, v) in [
            MetricKind::Delta,
            MetricKind::Theta,
            MetricKind::Alpha,
            MetricKind::Beta,
            MetricKind::Gamma,
        ]
        .into_iter()
        .zip(b.band_power)
        {
            set(&mut out, m, v);
        }
        let (lo, hi) = ONE_OVER_F_BAND;
        if let Ok(v) = one_over_f_exponent(&psd.freqs, &mean, lo, hi) {
            set(&mut out, MetricKind::OneOverF, v);
        }
    }
    if let Ok(c) = covariance_matrix(x) {
        set(&mut out, MetricKind::EigEntropy, eig_entropy(&c));
    }
    if let Ok(v) = dfa_hurst(x, fs) {
        set(&mut out, MetricKind::DfaHurst, v);
    }
    out
}

/// Scalar features `[run][window]` of each recording over `grid`.
pub fn window_features(recs: &[Recording], grid: &WindowGrid, welch: &WelchConfig) -> Result<Vec<Vec<[f64; 10]>>> {
    for r in recs {
        let need = grid.samples(grid.len() - 1, r.fs as f64);
        if need.0 + need.1 > r.samples() {
            return Err(EvalError::Protocol(format!(
                "`{}` has {:.2} s, the window grid needs {:.2} s",
                r.session_id,
                r.duration_s(),
                (need.0 + need.1) as f64 / r.fs as f64
            )));
        }
    }
    let cells: Vec<(usize, usize)> = (0..recs.len())
        .flat_map(|r| (0..grid.len()).map(move |w| (r, w)))
        .collect();
    let feats: Vec<[f64; 10]> = cells
        .par_iter()
        .map(|&(r, w)| {
            let rec = &recs[r];
            let fs = rec.fs as f64;
            let (s, n) = grid.samples(w, fs);
            let rows: Vec<Vec<f64>> = (0..rec.channels)
                .map(|c| rec.channel(c)[s..s + n].iter().map(|&v| v as f64).collect())
                .collect();
            scalar_features(&rows, fs, welch)
        })
        .collect();
    Ok(feats.chunks(grid.len()).map(|c| c.to_vec()).collect())
}

/// Real-run envelope and generated-run spread of one feature per window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCurve {
    pub metric: MetricKind,
    pub p5: Vec<f64>,
    pub p25: Vec<f64>,
    pub median: Vec<f64>,
    pub p75: Vec<f64>,
    pub p95: Vec<f64>,
    /// `generated[w][run]`; non-finite values are stored as `None`.
    pub generated: Vec<Vec<Option<f64>>>,
    /// Fraction of generated runs strictly outside `[p5, p95]`.
    pub oer: Vec<f64>,
    /// `IQR(generated) / IQR(real)`; `None` when the real IQR is zero.
    pub iqr_ratio: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCurves {
    pub grid: WindowGrid,
    pub real_runs: usize,
    pub generated_runs: usize,
    pub curves: Vec<EnvelopeCurve>,
    /// Out-of-envelope rate averaged over the headline features.
    pub mean_oer: Vec<f64>,
}

impl StabilityCurves {
    pub fn curve(&self, m: MetricKind) -> Option<&EnvelopeCurve> {
        self.curves.iter().find(|c| c.metric == m)
    }
}

/// Envelopes from the real runs and out-of-envelope rates of the
/// generated runs for every scalar feature over `grid`. A generated
/// feature that is not finite counts as outside.
pub fn stability_curves(
    real: &[Recording],
    generated: &[Recording],
    grid: &WindowGrid,
    welch: &WelchConfig,
) -> Result<StabilityCurves> {
    if real.len() < MIN_REAL_RUNS {
        return Err(EvalError::Protocol(format!(
            "{} real runs, envelopes need at least {MIN_REAL_RUNS}",
            real.len()
        )));
    }
    if generated.is_empty() {
        return Err(EvalError::Protocol("no generated runs".into()));
    }
    let fr = window_features(real, grid, welch)?;
    let fg = window_features(generated, grid, welch)?;
    let mut curves = Vec::new();
    for (k, &metric) in MetricKind::ALL.iter().enumerate() {
        let mut c = EnvelopeCurve {
            metric,
            p5: vec![],
            p25: vec![],
            median: vec![],
            p75: vec![],
            p95: vec![],
            generated: vec![],
            oer: vec![],
            iqr_ratio: vec![],
        };
        for w in 0..grid.len() {
            let r: Vec<f64> = fr.iter().map(|run| run[w][k]).collect();
            if r.iter().any(|v| !v.is_finite()) {
                return Err(EvalError::Protocol(format!(
                    "real feature {} is not finite in window {w}",
                    metric.name()
                )));
            }
            let rs = sorted(&r);
            let q = |p: f64| quantile_sorted(&rs, p);
            let (p5, p95) = (q(0.05), q(0.95));
            let g: Vec<f64> = fg.iter().map(|run| run[w][k]).collect();
            let outside = g.iter().filter(|v| !v.is_finite() || **v < p5 || **v > p95).count();
            let finite: Vec<f64> = g.iter().copied().filter(|v| v.is_finite()).collect();
            let real_iqr = q(0.75) - q(0.25);
            let ratio = if real_iqr > 0.0 && !finite.is_empty() {
                let gs = sorted(&finite);
                Some((quantile_sorted(&gs, 0.75) - quantile_sorted(&gs, 0.25)) / real_iqr)
            } else {
                None
            };
            c.p5.push(p5);
            c.p25.push(q(0.25));
            c.median.push(q(0.5));
            c.p75.push(q(0.75));
            c.p95.push(p95);
            c.generated.push(g.iter().map(|v| v.is_finite().then_some(*v)).collect());
            c.oer.push(outside as f64 / g.len() as f64);
            c.iqr_ratio.push(ratio);
        }
        curves.push(c);
    }
    let mean_oer = (0..grid.len())
        .map(|w| {
            HEADLINE
                .iter()
                .map(|m| curves.iter().find(|c| c.metric == *m).unwrap().oer[w])
                .sum::<f64>()
                / HEADLINE.len() as f64
        })
        .collect();
    Ok(StabilityCurves {
        grid: grid.clone(),
        real_runs: real.len(),
        generated_runs: generated.len(),
        curves,
        mean_oer,
    })
}
