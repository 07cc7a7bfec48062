use serde::{Deserialize, Serialize};

use crate::error::{MetricError, Result};

/// Canonical bands in Hz; together they partition 1–45 Hz.
pub const BANDS: [(&str, f64, f64); 5] = [
    ("delta", 1.0, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 12.0),
    ("beta", 12.0, 30.0),
    ("gamma", 30.0, 45.0),
];

pub const SUMMARY_BAND: (f64, f64) = (1.0, 45.0);

/// Integral over `[lo, hi]` of the piecewise-linear interpolant through
/// `(freqs[k], values[k])`. Additive over adjacent intervals.
pub fn integrate(freqs: &[f64], values: &[f64], lo: f64, hi: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..freqs.len().saturating_sub(1) {
        let (f0, f1) = (freqs[k], freqs[k + 1]);
        let a = f0.max(lo);
        let b = f1.min(hi);
        if b <= a {
            continue;
        }
        let at = |f: f64| values[k] + (values[k + 1] - values[k]) * (f - f0) / (f1 - f0);
        total += 0.5 * (at(a) + at(b)) * (b - a);
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandFeatures {
    pub centroid: f64,
    pub alpha_ratio: f64,
    pub total: f64,
    /// Power per entry of [`BANDS`].
    pub band_power: [f64; 5],
}

/// Spectral centroid and band powers of a (channel-mean) PSD over 1–45 Hz.
pub fn band_features(freqs: &[f64], psd: &[f64]) -> BandFeatures {
    let (lo, hi) = SUMMARY_BAND;
    let total = integrate(freqs, psd, lo, hi);
    let fp: Vec<f64> = freqs.iter().zip(psd).map(|(f, p)| f * p).collect();
    let first = integrate(freqs, &fp, lo, hi);
    let band_power = BANDS.map(|(_, a, b)| integrate(freqs, psd, a, b));
    let safe = |num: f64| if total > 0.0 { num / total } else { 0.0 };
    BandFeatures {
        centroid: safe(first),
        alpha_ratio: safe(band_power[2]),
        total,
        band_power,
    }
}

/// Negative OLS slope of `log10 P` against `log10 f` over `[lo, hi]`,
/// skipping non-positive bins.
pub fn one_over_f_exponent(freqs: &[f64], psd: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = freqs
        .iter()
        .zip(psd)
        .filter(|(f, p)| **f >= lo && **f <= hi && **p > 0.0 && **f > 0.0)
        .map(|(f, p)| (f.log10(), p.log10()))
        .collect();
    if pts.len() < 8 {
        return Err(MetricError::Fit(format!(
            "{} usable bins in {lo}–{hi} Hz, need 8",
            pts.len()
        )));
    }
    Ok(-ols_slope(&pts))
}

pub(crate) fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}
