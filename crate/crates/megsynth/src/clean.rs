use serde::{Deserialize, Serialize};

use crate::recording::Recording;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub window_s: f64,
    pub std_threshold: f64,
    pub max_bad_fraction: f64,
    pub min_segment_s: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            window_s: 5.0,
            std_threshold: 1.5,
            max_bad_fraction: 0.2,
            min_segment_s: 60.0,
        }
    }
}

pub const CLIP: f32 = 10.0;
const MIN_IQR: f64 = 1e-9;

/// Quantile of sorted data by linear interpolation between order
/// statistics at position `q·(n−1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * w
}

/// A robust-scaled recording and the channels whose IQR was degenerate.
#[derive(Clone, Debug)]
pub struct Scaled {
    pub recording: Recording,
    pub flagged: Vec<usize>,
}

/// Per channel: subtract the median and divide by the interquartile range.
pub fn robust_scale(rec: &Recording) -> Scaled {
    let mut out = rec.clone();
    let mut flagged = Vec::new();
    for c in 0..rec.channels {
        let mut s: Vec<f64> = rec.channel(c).iter().map(|&v| v as f64).collect();
        s.sort_by(f64::total_cmp);
        let med = quantile_sorted(&s, 0.5);
        let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
        let div = if iqr < MIN_IQR {
            flagged.push(c);
            1.0
        } else {
            iqr
        };
        for (o, &v) in out.channel_mut(c).iter_mut().zip(rec.channel(c)) {
            *o = ((v as f64 - med) / div) as f32;
        }
    }
    Scaled {
        recording: out,
        flagged,
    }
}

fn std_f32(x: &[f32]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    (x.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Window rejection: a window is bad when any channel's std exceeds the
/// threshold. Sessions with too many bad windows yield nothing; otherwise
/// samples are clipped to ±10 and every contiguous good run of at least
/// `min_segment_s` is returned. A trailing partial window is discarded.
pub fn clean_session(rec: &Recording, cfg: &CleanConfig) -> Vec<Recording> {
    let win = (cfg.window_s * rec.fs as f64).round() as usize;
    let n_win = if win == 0 { 0 } else { rec.samples() / win };
    if n_win == 0 {
        return Vec::new();
    }
    let good: Vec<bool> = (0..n_win)
        .map(|w| {
            (0..rec.channels)
                .all(|c| std_f32(&rec.channel(c)[w * win..(w + 1) * win]) <= cfg.std_threshold)
        })
        .collect();
    let bad = good.iter().filter(|g| !**g).count();
    if bad as f64 / n_win as f64 > cfg.max_bad_fraction {
        return Vec::new();
    }
    let min_windows = (cfg.min_segment_s / cfg.window_s).ceil() as usize;
    let mut out = Vec::new();
    let mut w = 0;
    while w < n_win {
        if !good[w] {
            w += 1;
            continue;
        }
        let start = w;
        while w < n_win && good[w] {
            w += 1;
        }
        if w - start >= min_windows {
            let mut seg = rec.slice(start * win, (w - start) * win);
            seg.data.iter_mut().for_each(|v| *v = v.clamp(-CLIP, CLIP));
            out.push(seg);
        }
    }
    out
}

/// Robust scaling followed by window rejection: the clean segments a
/// session contributes to training or evaluation.
pub fn preprocess(rec: &Recording, cfg: &CleanConfig) -> Vec<Recording> {
    clean_session(&robust_scale(rec).recording, cfg)
}
