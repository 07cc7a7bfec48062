use diffcore::SeededRng;
use serde::{Deserialize, Serialize};

use crate::error::{LmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for SamplingConfig {
    /// Plain multinomial sampling.
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
        }
    }
}

/// Probabilities `softmax(logits / temperature)` truncated to the smallest
/// set of most likely tokens whose mass reaches `top_p`, renormalised.
/// Ties in probability keep the lower index first.
pub fn nucleus_probs(logits: &[f32], cfg: &SamplingConfig) -> Result<Vec<f64>> {
    if !(cfg.temperature > 0.0) || !(cfg.top_p > 0.0 && cfg.top_p <= 1.0) {
        return Err(LmError::Sampling(format!(
            "need temperature > 0 and top_p in (0, 1], got {} and {}",
            cfg.temperature, cfg.top_p
        )));
    }
    let mx = logits
        .iter()
        .map(|&v| v as f64)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return Err(LmError::Sampling("no finite logit to sample from".into()));
    }
    let mut p: Vec<f64> = logits
        .iter()
        .map(|&v| {
            let v = v as f64;
            if v.is_finite() {
                ((v - mx) / cfg.temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    if cfg.top_p < 1.0 {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        let mut cum = 0.0;
        let mut keep = vec![false; p.len()];
        for &i in &order {
            keep[i] = true;
            cum += p[i];
            if cum >= cfg.top_p {
                break;
            }
        }
        p.iter_mut().zip(&keep).for_each(|(v, &k)| {
            if !k {
                *v = 0.0
            }
        });
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
    }
    Ok(p)
}

/// Draws one token id by inverse-CDF sampling from [`nucleus_probs`].
pub fn sample_next(logits: &[f32], cfg: &SamplingConfig, rng: &mut SeededRng) -> Result<u32> {
    let p = nucleus_probs(logits, cfg)?;
    let u = rng.next_f64();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            last = i;
            cum += pi;
            if u < cum {
                return Ok(i as u32);
            }
        }
    }
    Ok(last as u32)
}
