use crate::bands::ols_slope;
use crate::error::{MetricError, Result};

const N_BOXES: usize = 12;
const MIN_SECONDS: f64 = 4.0;

/// DFA scaling exponent of one channel: order-1 detrended fluctuation of the
/// integrated profile over ~12 log-spaced box sizes in `[0.5 s, T/4]`.
pub fn dfa_exponent(x: &[f64], fs: f64) -> Result<f64> {
    let t = x.len();
    if (t as f64) < MIN_SECONDS * fs {
        return Err(MetricError::Length(format!(
            "DFA needs ≥ {MIN_SECONDS} s, got {} s",
            t as f64 / fs
        )));
    }
    let mean = x.iter().sum::<f64>() / t as f64;
    let mut profile = Vec::with_capacity(t);
    let mut acc = 0.0;
    for v in x {
        acc += v - mean;
        profile.push(acc);
    }
    let n_min = ((0.5 * fs).round() as usize).max(4);
    let n_max = t / 4;
    if n_max <= n_min {
        return Err(MetricError::Length("box range is empty".into()));
    }
    let mut sizes: Vec<usize> = (0..N_BOXES)
        .map(|i| {
            let r = i as f64 / (N_BOXES - 1) as f64;
            ((n_min as f64).ln() * (1.0 - r) + (n_max as f64).ln() * r).exp().round() as usize
        })
        .collect();
    sizes.dedup();
    let pts: Vec<(f64, f64)> = sizes
        .iter()
        .map(|&n| ((n as f64).ln(), fluctuation(&profile, n).ln()))
        .collect();
    if pts.len() < 3 {
        return Err(MetricError::Fit("fewer than 3 distinct box sizes".into()));
    }
    Ok(ols_slope(&pts))
}

fn fluctuation(profile: &[f64], n: usize) -> f64 {
    let boxes = profile.len() / n;
    // x = 0..n−1 is fixed per box size, so its moments are shared
    let xm = (n as f64 - 1.0) / 2.0;
    let sxx: f64 = (0..n).map(|i| (i as f64 - xm).powi(2)).sum();
    let mut ss = 0.0;
    for b in 0..boxes {
        let seg = &profile[b * n..(b + 1) * n];
        let ym = seg.iter().sum::<f64>() / n as f64;
        let sxy: f64 = seg.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum();
        let slope = sxy / sxx;
        ss += seg
            .iter()
            .enumerate()
            .map(|(i, y)| (y - ym - slope * (i as f64 - xm)).powi(2))
            .sum::<f64>();
    }
    (ss / (boxes * n) as f64).sqrt()
}

/// Channel-mean DFA exponent.
pub fn dfa_hurst(x: &[Vec<f64>], fs: f64) -> Result<f64> {
    let mut total = 0.0;
    for row in x {
        total += dfa_exponent(row, fs)?;
    }
    Ok(total / x.len() as f64)
}
