use nalgebra::DMatrix;

use crate::bands::SUMMARY_BAND;
use crate::error::{MetricError, Result};
use crate::spectral::PsdEstimate;

/// `‖A − B‖_F / (½(‖A‖_F + ‖B‖_F))`, 0 when both are zero; lies in `[0, 2]`.
pub fn matrix_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(MetricError::Dimension(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let denom = 0.5 * (a.norm() + b.norm());
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((a - b).norm() / denom)
}

fn band_distribution(psd: &PsdEstimate) -> Vec<f64> {
    let (lo, hi) = SUMMARY_BAND;
    let mean = psd.channel_mean();
    let sel: Vec<f64> = psd
        .freqs
        .iter()
        .zip(&mean)
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(_, p)| p.max(0.0))
        .collect();
    let total: f64 = sel.iter().sum();
    if total > 0.0 {
        sel.iter().map(|p| p / total).collect()
    } else {
        sel
    }
}

/// Jensen–Shannon divergence (base 2) between the channel-mean PSDs over
/// 1–45 Hz, each normalised to a distribution over bins.
pub fn psd_jsd(a: &PsdEstimate, b: &PsdEstimate) -> Result<f64> {
    if a.freqs != b.freqs {
        return Err(MetricError::Grid(format!(
            "{} vs {} bins",
            a.freqs.len(),
            b.freqs.len()
        )));
    }
    let (p, q) = (band_distribution(a), band_distribution(b));
    let mut js = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            js += 0.5 * pi * (pi / m).log2();
        }
        if qi > 0.0 {
            js += 0.5 * qi * (qi / m).log2();
        }
    }
    Ok(js.clamp(0.0, 1.0))
}
