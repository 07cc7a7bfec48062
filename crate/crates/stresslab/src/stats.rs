use diffcore::SeededRng;
use megsynth::quantile_sorted;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{EvalError, Result};

/// Largest sample size tested by enumerating every sign pattern.
pub const EXACT_MAX_N: usize = 12;
pub const MIN_NONZERO: usize = 5;

pub fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    quantile_sorted(&sorted(x), q)
}

pub fn median(x: &[f64]) -> f64 {
    quantile(x, 0.5)
}

/// 1-based ranks with tied values sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Nonzero differences tested.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W⁺, W⁻)`.
    pub w: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Two-sided p of `W = w` by enumerating all `2ⁿ` sign assignments of `ranks`.
pub fn wilcoxon_exact_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len();
    let total: f64 = ranks.iter().sum();
    let mut hits = 0u64;
    for mask in 0u64..1 << n {
        let plus: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if plus.min(total - plus) <= w + 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// Two-sided p of `W = w` from the normal approximation with tie-corrected
/// variance and a 0.5 continuity correction.
pub fn wilcoxon_normal_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    let s = sorted(ranks);
    let mut i = 0;
    while i < s.len() {
        let j = s[i..].iter().take_while(|&&r| r == s[i]).count();
        let t = j as f64;
        var -= (t * t * t - t) / 48.0;
        i += j;
    }
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean + 0.5) / var.sqrt()).min(0.0);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.cdf(z)).min(1.0)
}

/// Wilcoxon signed-rank test of paired differences against zero median.
/// Zeros are dropped; up to 12 nonzero differences use the exact
/// distribution, more use the normal approximation.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<Wilcoxon> {
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.iter().any(|d| !d.is_finite()) {
        return Err(EvalError::UndefinedTest("non-finite difference".into()));
    }
    if nz.len() < MIN_NONZERO {
        return Err(EvalError::UndefinedTest(format!(
            "{} nonzero differences, need at least {MIN_NONZERO}",
            nz.len()
        )));
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w_minus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d < 0.0).map(|(_, r)| r).sum();
    let w = w_plus.min(w_minus);
    let exact = nz.len() <= EXACT_MAX_N;
    let p = if exact {
        wilcoxon_exact_p(&ranks, w)
    } else {
        wilcoxon_normal_p(&ranks, w)
    };
    Ok(Wilcoxon {
        n: nz.len(),
        w_plus,
        w_minus,
        w,
        p,
        exact,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    /// Median of the observed differences.
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
}

/// Percentile bootstrap of the median: resamples with replacement and
/// takes the 2.5 % and 97.5 % quantiles of the resampled medians.
pub fn bootstrap_ci(diffs: &[f64], n_resamples: usize, seed: u64) -> Result<BootstrapCi> {
    let n = diffs.len();
    if n < 3 {
        return Err(EvalError::Protocol(format!("bootstrap needs at least 3 values, got {n}")));
    }
    if n_resamples == 0 {
        return Err(EvalError::Config("bootstrap needs at least one resample".into()));
    }
    let mut rng = SeededRng::named(seed, "stresslab/bootstrap");
    let mut buf = vec![0.0; n];
    let mut medians = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        for v in buf.iter_mut() {
            *v = diffs[rng.below(n)];
        }
        buf.sort_by(f64::total_cmp);
        medians.push(quantile_sorted(&buf, 0.5));
    }
    medians.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        estimate: median(diffs),
        lo: quantile_sorted(&medians, 0.025),
        hi: quantile_sorted(&medians, 0.975),
        resamples: n_resamples,
    })
}
