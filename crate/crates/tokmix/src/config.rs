use serde::{Deserialize, Serialize};

use crate::error::{Result, TokError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    /// Input channels `C`.
    pub channels: usize,
    /// Window length `L_w` in samples.
    pub window: usize,
    /// Down-sampling strides; their product is the hop length `r`.
    pub ratios: Vec<usize>,
    pub n_filters: usize,
    /// Encoder output width.
    pub n_dim: usize,
    /// Latent streams `H`; each carries `n_dim / H` dimensions.
    pub n_neuro: usize,
    /// RVQ levels `Q`.
    pub levels: usize,
    /// Codes per level `K`.
    pub codebook_size: usize,
    pub n_res_layers: usize,
    pub ema_decay: f64,
}

impl TokenizerConfig {
    pub fn desk(channels: usize) -> Self {
        Self {
            channels,
            window: 256,
            ratios: vec![2, 2],
            n_filters: 32,
            n_dim: 64,
            n_neuro: 2,
            levels: 2,
            codebook_size: 64,
            n_res_layers: 1,
            ema_decay: 0.99,
        }
    }

    /// Published full-scale settings; kept for documentation and token-rate
    /// arithmetic, far too large to train here.
    pub fn paper(channels: usize) -> Self {
        Self {
            channels,
            window: 1024,
            ratios: vec![2, 2],
            n_filters: 1024,
            n_dim: 4096,
            n_neuro: 4,
            levels: 4,
            codebook_size: 16384,
            n_res_layers: 1,
            ema_decay: 0.99,
        }
    }

    pub fn hop(&self) -> usize {
        self.ratios.iter().product()
    }

    pub fn code_dim(&self) -> usize {
        self.n_dim / self.n_neuro
    }

    /// Latent rows per window, `T_w = L_w / r`.
    pub fn latent_len(&self) -> usize {
        self.window / self.hop()
    }

    /// Tokens one window turns into, `(L_w / r)·H·Q`.
    pub fn tokens_per_window(&self) -> usize {
        self.latent_len() * self.n_neuro * self.levels
    }

    /// Tokens per second, `fs·H·Q / r`.
    pub fn token_rate(&self, fs: f64) -> f64 {
        fs * (self.n_neuro * self.levels) as f64 / self.hop() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TokError::Config(m.to_string()));
        if self.ratios.is_empty() || self.ratios.contains(&0) {
            return bad("ratios must be non-empty and positive");
        }
        if self.n_neuro == 0 || self.n_dim % self.n_neuro != 0 {
            return bad("n_dim must be divisible by n_neuro");
        }
        if self.window % self.hop() != 0 {
            return bad("window must be divisible by the hop length");
        }
        if self.codebook_size < 2 || self.levels < 1 {
            return bad("need K ≥ 2 and Q ≥ 1");
        }
        if self.channels == 0 || self.n_filters < 2 || self.n_filters % 2 != 0 {
            return bad("channels must be ≥ 1 and n_filters even");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1)");
        }
        Ok(())
    }

    /// Stable identifier of the config, stored in token files.
    pub fn hash(&self) -> u64 {
        diffcore::hash_name(&serde_json::to_string(self).expect("config serialises"))
    }
}
