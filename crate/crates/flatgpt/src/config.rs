use serde::{Deserialize, Serialize};

use crate::error::{LmError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub mlp_width: usize,
    pub rope_theta: f64,
    /// Rotary pairs driven by the time, stream and level axes.
    pub mrope_split: [usize; 3],
    /// Longest sequence the model attends over, `N`.
    pub max_context: usize,
    /// Codes per level, `K`.
    pub vocab: usize,
    /// RVQ levels, `Q`.
    pub levels: usize,
    /// Latent streams, `H`.
    pub streams: usize,
    /// Latent rows one tokenizer window produces, `L_w / r`.
    pub window_rows: usize,
}

impl LmConfig {
    /// CPU-sized model matched to the desk tokenizer (K 64, Q 2, H 2).
    pub fn desk() -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            n_kv_heads: 2,
            head_dim: 16,
            mlp_width: 256,
            rope_theta: 1e4,
            mrope_split: [4, 2, 2],
            max_context: 1024,
            vocab: 64,
            levels: 2,
            streams: 2,
            window_rows: 64,
        }
    }

    /// Published full-scale backbone over the full-scale tokenizer
    /// (K 16384, Q 4, H 4, 256 rows per window) with a 61.44 s context.
    /// Documentation only; far too large to train here.
    pub fn paper() -> Self {
        Self {
            n_layers: 12,
            d_model: 1200,
            n_heads: 10,
            n_kv_heads: 2,
            head_dim: 120,
            mlp_width: 4560,
            rope_theta: 1e6,
            mrope_split: [20, 20, 20],
            max_context: 24_576,
            vocab: 16_384,
            levels: 4,
            streams: 4,
            window_rows: 256,
        }
    }

    /// Desk model sized for a given tokenizer.
    pub fn for_tokenizer(tok: &tokmix::TokenizerConfig) -> Self {
        Self {
            vocab: tok.codebook_size,
            levels: tok.levels,
            streams: tok.n_neuro,
            window_rows: tok.latent_len(),
            ..Self::desk()
        }
    }

    /// Tokens per tokenizer window, `W_tok = (L_w / r)·H·Q`.
    pub fn window_tokens(&self) -> usize {
        self.window_rows * self.streams * self.levels
    }

    pub fn tokens_per_row(&self) -> usize {
        self.streams * self.levels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LmError::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.n_kv_heads == 0 {
            return bad("layers and heads must be positive".into());
        }
        if self.d_model != self.n_heads * self.head_dim {
            return bad(format!(
                "d_model {} ≠ heads {} × head_dim {}",
                self.d_model, self.n_heads, self.head_dim
            ));
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return bad("n_heads must be divisible by n_kv_heads".into());
        }
        if self.head_dim % 2 != 0 || self.mrope_split.iter().sum::<usize>() != self.head_dim / 2 {
            return bad(format!(
                "rotary split {:?} must sum to head_dim/2 = {}",
                self.mrope_split,
                self.head_dim / 2
            ));
        }
        if self.mrope_split.contains(&0) {
            return bad("every rotary section needs at least one pair".into());
        }
        if self.vocab < 2 || self.levels == 0 || self.streams == 0 || self.window_rows == 0 {
            return bad("vocab ≥ 2 and positive levels, streams, window rows required".into());
        }
        if self.max_context < self.window_tokens() || self.max_context % self.window_tokens() != 0 {
            return bad(format!(
                "context {} must be a positive multiple of the window token count {}",
                self.max_context,
                self.window_tokens()
            ));
        }
        Ok(())
    }

    pub fn hash(&self) -> u64 {
        diffcore::hash_name(&serde_json::to_string(self).expect("config serialises"))
    }
}
