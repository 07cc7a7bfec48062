use tokmix::TokenGrid;

use crate::error::{LmError, Result};

/// Token sequence serialised time-major, then stream, then level (level
/// fastest).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatStream {
    pub tokens: Vec<u32>,
    pub streams: usize,
    pub levels: usize,
}

/// 1-based flat index of the 1-based triple `(t, h, q)`:
/// `((t−1)·H + (h−1))·Q + q`.
pub fn flat_index(t: usize, h: usize, q: usize, streams: usize, levels: usize) -> usize {
    ((t - 1) * streams + (h - 1)) * levels + q
}

/// Inverse of [`flat_index`]: 1-based `i` → 1-based `(t, h, q)`.
pub fn position_of(i: usize, streams: usize, levels: usize) -> (usize, usize, usize) {
    let z = i - 1;
    (z / (streams * levels) + 1, (z / levels) % streams + 1, z % levels + 1)
}

/// 0-based `(t, h, q)` of 0-based offset `j`; rotary angles use these.
pub fn triple0(j: usize, streams: usize, levels: usize) -> [usize; 3] {
    [j / (streams * levels), (j / levels) % streams, j % levels]
}

impl FlatStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// 1-based position triple of 1-based token `i`.
    pub fn position(&self, i: usize) -> (usize, usize, usize) {
        position_of(i, self.streams, self.levels)
    }

    /// 0-based RVQ level of 0-based token `j`.
    pub fn level(&self, j: usize) -> usize {
        j % self.levels
    }
}

pub fn flatten(grid: &TokenGrid) -> FlatStream {
    // grids already store codes in flatten order
    FlatStream {
        tokens: grid.codes.clone(),
        streams: grid.streams,
        levels: grid.levels,
    }
}

pub fn unflatten(stream: &FlatStream, codebook_size: usize, config_hash: u64) -> Result<TokenGrid> {
    let per = stream.streams * stream.levels;
    if per == 0 || stream.len() % per != 0 {
        return Err(LmError::Format(format!(
            "length {} is not a multiple of H·Q = {per}",
            stream.len()
        )));
    }
    TokenGrid::new(
        stream.len() / per,
        stream.streams,
        stream.levels,
        codebook_size,
        config_hash,
        stream.tokens.clone(),
    )
    .map_err(|e| LmError::Format(e.to_string()))
}
