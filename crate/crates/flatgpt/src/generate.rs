use diffcore::SeededRng;

use crate::error::{LmError, Result};
use crate::model::{Decoder, Lm};
use crate::sample::{sample_next, SamplingConfig};

/// Sampled continuation plus bookkeeping about cache slides.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub tokens: Vec<u32>,
    /// Number of times the oldest tokenizer window was dropped.
    pub slides: usize,
    /// Prompt tokens dropped up front because the prompt exceeded the context.
    pub prompt_dropped: usize,
}

/// Samples `n_new` tokens after `prompt` with a key/value cache. When the
/// cache is full the oldest tokenizer window (`W_tok` tokens) is dropped,
/// positions restart at `t = 0` for the retained suffix and the cache is
/// refilled in one pass. Prompts must be whole tokenizer windows; a prompt
/// longer than the context keeps only its most recent whole windows.
pub fn sliding_generate(
    lm: &Lm,
    prompt: &[u32],
    n_new: usize,
    sampling: &SamplingConfig,
    rng: &mut SeededRng,
) -> Result<Generation> {
    let c = &lm.config;
    let w_tok = c.window_tokens();
    if prompt.is_empty() || prompt.len() % w_tok != 0 {
        return Err(LmError::Alignment(format!(
            "prompt of {} tokens is not a positive multiple of the {w_tok}-token window",
            prompt.len()
        )));
    }
    if n_new == 0 {
        return Err(LmError::Context("nothing to generate".into()));
    }
    let keep = prompt.len().min(c.max_context / w_tok * w_tok);
    let prompt_dropped = prompt.len() - keep;
    let mut ctx: Vec<u32> = prompt[prompt_dropped..].to_vec();
    let mut dec = Decoder::new(lm);
    let mut logits = dec.feed_last(&ctx)?;
    let mut out = Vec::with_capacity(n_new);
    let mut slides = 0;
    for n in 0..n_new {
        let tok = sample_next(&logits, sampling, rng)?;
        out.push(tok);
        ctx.push(tok);
        if n + 1 == n_new {
            break;
        }
        if dec.len() == c.max_context {
            ctx.drain(..w_tok);
            dec.reset();
            logits = dec.feed_last(&ctx)?;
            slides += 1;
        } else {
            logits = dec.feed_last(&[tok])?;
        }
    }
    Ok(Generation {
        tokens: out,
        slides,
        prompt_dropped,
    })
}
