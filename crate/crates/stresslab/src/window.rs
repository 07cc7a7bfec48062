use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

pub const MIN_WINDOWS: usize = 3;

/// Sliding windows over a continuation, start times in seconds from its
/// first sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub window_s: f64,
    pub stride_s: f64,
    pub starts_s: Vec<f64>,
}

impl WindowGrid {
    /// Every window of `window_s` at multiples of `stride_s` lying entirely
    /// inside `horizon_s`.
    pub fn new(horizon_s: f64, window_s: f64, stride_s: f64) -> Result<Self> {
        if !(window_s > 0.0 && stride_s > 0.0) {
            return Err(EvalError::Config(format!(
                "window {window_s} s and stride {stride_s} s must be positive"
            )));
        }
        let mut starts_s = Vec::new();
        let mut k = 0usize;
        loop {
            let s = k as f64 * stride_s;
            if s + window_s > horizon_s + 1e-9 {
                break;
            }
            starts_s.push(s);
            k += 1;
        }
        if starts_s.len() < MIN_WINDOWS {
            return Err(EvalError::Protocol(format!(
                "{} windows of {window_s} s fit in {horizon_s} s, need at least {MIN_WINDOWS}",
                starts_s.len()
            )));
        }
        Ok(Self {
            window_s,
            stride_s,
            starts_s,
        })
    }

    pub fn len(&self) -> usize {
        self.starts_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts_s.is_empty()
    }

    /// First sample and length of window `i` at rate `fs`.
    pub fn samples(&self, i: usize, fs: f64) -> (usize, usize) {
        (
            (self.starts_s[i] * fs).round() as usize,
            (self.window_s * fs).round() as usize,
        )
    }
}
