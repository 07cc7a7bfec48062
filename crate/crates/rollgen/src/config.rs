use flatgpt::SamplingConfig;
use serde::{Deserialize, Serialize};
use tokmix::TokenizerConfig;

use crate::error::{Result, RollError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Context length `T_c` in seconds.
    pub context_s: f64,
    /// Context plus continuation, in seconds.
    pub total_s: f64,
    pub temperature: f64,
    pub top_p: f64,
    /// Key/value cache size `N` in tokens; at most the model's context.
    pub max_cache_tokens: usize,
    /// Master seed; each pair derives its own stream from it.
    pub seed: u64,
}

/// Whole-window extents of a rollout for a given tokenizer and rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RolloutPlan {
    pub window_samples: usize,
    pub context_windows: usize,
    pub total_windows: usize,
    pub tokens_per_window: usize,
}

impl RolloutPlan {
    pub fn context_samples(&self) -> usize {
        self.context_windows * self.window_samples
    }

    pub fn total_samples(&self) -> usize {
        self.total_windows * self.window_samples
    }

    pub fn horizon_samples(&self) -> usize {
        self.total_samples() - self.context_samples()
    }

    pub fn context_tokens(&self) -> usize {
        self.context_windows * self.tokens_per_window
    }

    /// Tokens to sample, `H·fs·(H_streams·Q / r)`.
    pub fn horizon_tokens(&self) -> usize {
        (self.total_windows - self.context_windows) * self.tokens_per_window
    }
}

impl RolloutConfig {
    /// 20.48 s of context and 40.96 s of continuation at multinomial sampling.
    pub fn desk(seed: u64) -> Self {
        Self {
            context_s: 20.48,
            total_s: 61.44,
            temperature: 1.0,
            top_p: 1.0,
            max_cache_tokens: 1024,
            seed,
        }
    }

    /// Published full-scale protocol: 61.44 s context, 296.96 s segments.
    pub fn paper(seed: u64) -> Self {
        Self {
            context_s: 61.44,
            total_s: 296.96,
            temperature: 1.0,
            top_p: 1.0,
            max_cache_tokens: 24_576,
            seed,
        }
    }

    pub fn horizon_s(&self) -> f64 {
        self.total_s - self.context_s
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }

    /// Checks that both durations are whole tokenizer windows at `fs` and
    /// that the horizon is positive.
    pub fn plan(&self, tok: &TokenizerConfig, fs: f64) -> Result<RolloutPlan> {
        let win_s = tok.window as f64 / fs;
        let whole = |s: f64, what: &str| -> Result<usize> {
            let n = (s / win_s).round();
            if n < 1.0 || (n * win_s - s).abs() > 1e-6 * win_s.max(1.0) {
                return Err(RollError::Config(format!(
                    "{what} {s} s is not a positive whole number of {win_s} s windows"
                )));
            }
            Ok(n as usize)
        };
        let context_windows = whole(self.context_s, "context")?;
        let total_windows = whole(self.total_s, "total length")?;
        if total_windows <= context_windows {
            return Err(RollError::Config(format!(
                "horizon {} s must be positive",
                self.horizon_s()
            )));
        }
        Ok(RolloutPlan {
            window_samples: tok.window,
            context_windows,
            total_windows,
            tokens_per_window: tok.tokens_per_window(),
        })
    }
}
