use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex;

use crate::error::{MetricError, Result};
use crate::spectral::{Segmenter, WelchConfig};

/// Sample covariance (mean removed, divided by `T − 1`), exactly symmetric.
pub fn covariance_matrix(x: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let c = x.len();
    let t = x.first().map_or(0, Vec::len);
    if t < 2 {
        return Err(MetricError::Length(format!("covariance needs T ≥ 2, got {t}")));
    }
    let centred: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            let m = r.iter().sum::<f64>() / t as f64;
            r.iter().map(|v| v - m).collect()
        })
        .collect();
    let mut cov = DMatrix::zeros(c, c);
    for i in 0..c {
        for j in i..c {
            let s: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            let v = s / (t - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Normalised Shannon entropy of the eigenvalue distribution, in `[0, 1]`.
pub fn eig_entropy(cov: &DMatrix<f64>) -> f64 {
    let c = cov.nrows();
    if c < 2 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(0.0, f64::max);
    // eigenvalues that are rounding noise around zero count as zero
    let lam: Vec<f64> = eig
        .iter()
        .map(|&l| if l > max * 1e-12 { l } else { 0.0 })
        .collect();
    let total: f64 = lam.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = lam
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| {
            let p = l / total;
            -p * p.ln()
        })
        .sum();
    (h / (c as f64).ln()).clamp(0.0, 1.0)
}

/// Magnitude-squared coherence from Welch cross-spectra, averaged over the
/// bins in `[lo, hi]` Hz; the diagonal is 1.
pub fn coherence_matrix(
    x: &[Vec<f64>],
    fs: f64,
    cfg: &WelchConfig,
    (lo, hi): (f64, f64),
) -> Result<DMatrix<f64>> {
    let c = x.len();
    let t = x.first().map_or(0, Vec::len);
    let sg = Segmenter::new(fs, t, cfg)?;
    let n_seg = sg.count(t);
    let bins: Vec<usize> = (0..sg.bins())
        .filter(|&k| {
            let f = k as f64 * fs / sg.seg as f64;
            f >= lo && f <= hi
        })
        .collect();
    if bins.is_empty() {
        return Err(MetricError::Length(format!("no bins in {lo}–{hi} Hz")));
    }
    // spectra[c][s][bin]
    let spectra: Vec<Vec<Vec<Complex<f64>>>> = x
        .iter()
        .map(|row| {
            (0..n_seg)
                .map(|s| {
                    let z = sg.spectrum(row, s);
                    bins.iter().map(|&k| z[k]).collect()
                })
                .collect()
        })
        .collect();
    let auto: Vec<Vec<f64>> = spectra
        .iter()
        .map(|sp| {
            (0..bins.len())
                .map(|b| sp.iter().map(|seg| seg[b].norm_sqr()).sum())
                .collect()
        })
        .collect();
    let mut coh = DMatrix::identity(c, c);
    for i in 0..c {
        for j in i + 1..c {
            let mut acc = 0.0;
            for b in 0..bins.len() {
                let sxy: Complex<f64> = (0..n_seg)
                    .map(|s| spectra[i][s][b] * spectra[j][s][b].conj())
                    .sum();
                let denom = auto[i][b] * auto[j][b];
                if denom > 0.0 {
                    acc += (sxy.norm_sqr() / denom).min(1.0);
                }
            }
            let v = acc / bins.len() as f64;
            coh[(i, j)] = v;
            coh[(j, i)] = v;
        }
    }
    Ok(coh)
}
