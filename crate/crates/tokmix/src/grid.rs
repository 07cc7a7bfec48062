//! Token grids and the `MEGT` file layout (little-endian): magic, version
//! `u32`, `T′ u64`, `H u16`, `Q u16`, `K u32`, config hash `u64`, flags
//! `u32` (bit 0: generated), then `T′·H·Q` `u32` codes in flatten order
//! `(t·H + h)·Q + q`.

use std::path::Path;

use megsynth::Recording;

use crate::error::{Result, TokError};
use crate::model::Tokenizer;

pub const MAGIC: &[u8; 4] = b"MEGT";
pub const VERSION: u32 = 1;
const FLAG_GENERATED: u32 = 1;

/// Code indices `c[t′][h][q]` stored flat, level fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    pub rows: usize,
    pub streams: usize,
    pub levels: usize,
    pub codebook_size: usize,
    pub config_hash: u64,
    pub generated: bool,
    pub codes: Vec<u32>,
}

impl TokenGrid {
    pub fn new(
        rows: usize,
        streams: usize,
        levels: usize,
        codebook_size: usize,
        config_hash: u64,
        codes: Vec<u32>,
    ) -> Result<Self> {
        if codes.len() != rows * streams * levels {
            return Err(TokError::Shape(format!(
                "{} codes for extents ({rows}, {streams}, {levels})",
                codes.len()
            )));
        }
        if let Some(c) = codes.iter().find(|&&c| c as usize >= codebook_size) {
            return Err(TokError::Shape(format!("code {c} ≥ K = {codebook_size}")));
        }
        Ok(Self {
            rows,
            streams,
            levels,
            codebook_size,
            config_hash,
            generated: false,
            codes,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index(&self, t: usize, h: usize, q: usize) -> usize {
        (t * self.streams + h) * self.levels + q
    }

    pub fn get(&self, t: usize, h: usize, q: usize) -> u32 {
        self.codes[self.index(t, h, q)]
    }

    /// Rows `start..start + len` as a new grid.
    pub fn rows_slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.rows {
            return Err(TokError::Length(format!(
                "rows {start}..{} beyond {}",
                start + len,
                self.rows
            )));
        }
        let per = self.streams * self.levels;
        let mut g = self.clone();
        g.rows = len;
        g.codes = self.codes[start * per..(start + len) * per].to_vec();
        Ok(g)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36 + 4 * self.codes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.streams as u16).to_le_bytes());
        out.extend_from_slice(&(self.levels as u16).to_le_bytes());
        out.extend_from_slice(&(self.codebook_size as u32).to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        let flags = if self.generated { FLAG_GENERATED } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        for &c in &self.codes {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut take = |n: usize, what: &str| -> Result<(usize, &[u8])> {
            if bytes.len() - pos < n {
                return Err(TokError::Format {
                    offset: pos,
                    reason: format!("truncated while reading {what}"),
                });
            }
            let at = pos;
            pos += n;
            Ok((at, &bytes[at..at + n]))
        };
        let (_, magic) = take(4, "magic")?;
        if magic != MAGIC {
            return Err(TokError::Format {
                offset: 0,
                reason: "bad magic, expected MEGT".into(),
            });
        }
        let (at, v) = take(4, "version")?;
        let version = u32::from_le_bytes(v.try_into().unwrap());
        if version != VERSION {
            return Err(TokError::Format {
                offset: at,
                reason: format!("unsupported version {version}"),
            });
        }
        let rows = u64::from_le_bytes(take(8, "row count")?.1.try_into().unwrap()) as usize;
        let streams = u16::from_le_bytes(take(2, "stream count")?.1.try_into().unwrap()) as usize;
        let levels = u16::from_le_bytes(take(2, "level count")?.1.try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(take(4, "codebook size")?.1.try_into().unwrap()) as usize;
        let config_hash = u64::from_le_bytes(take(8, "config hash")?.1.try_into().unwrap());
        let (flags_at, f) = take(4, "flags")?;
        let flags = u32::from_le_bytes(f.try_into().unwrap());
        if flags & !FLAG_GENERATED != 0 {
            return Err(TokError::Format {
                offset: flags_at,
                reason: format!("unknown flags {flags:#x}"),
            });
        }
        let n = rows
            .checked_mul(streams)
            .and_then(|v| v.checked_mul(levels))
            .ok_or_else(|| TokError::Format {
                offset: 8,
                reason: "extents overflow".into(),
            })?;
        let mut codes = Vec::with_capacity(n.min(bytes.len() / 4));
        for _ in 0..n {
            let (at, c) = take(4, "codes")?;
            let c = u32::from_le_bytes(c.try_into().unwrap());
            if c as usize >= k {
                return Err(TokError::Format {
                    offset: at,
                    reason: format!("code {c} ≥ K = {k}"),
                });
            }
            codes.push(c);
        }
        if pos != bytes.len() {
            return Err(TokError::Format {
                offset: pos,
                reason: format!("{} trailing bytes", bytes.len() - pos),
            });
        }
        let mut g = Self::new(rows, streams, levels, k, config_hash, codes)?;
        g.generated = flags & FLAG_GENERATED != 0;
        Ok(g)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.encode())?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// A tokenized segment and how many trailing samples did not fill a window.
#[derive(Clone, Debug)]
pub struct Tokenized {
    pub grid: TokenGrid,
    pub dropped_samples: usize,
}

/// Tokenizes every whole window of `rec` independently and concatenates
/// the grids along time.
pub fn tokenize_segment(rec: &Recording, tok: &Tokenizer) -> Result<Tokenized> {
    let cfg = &tok.config;
    if rec.channels != cfg.channels {
        return Err(TokError::Shape(format!(
            "recording has {} channels, tokenizer expects {}",
            rec.channels, cfg.channels
        )));
    }
    let n_win = rec.samples() / cfg.window;
    if n_win == 0 {
        return Err(TokError::Length(format!(
            "segment of {} samples is shorter than one {}-sample window",
            rec.samples(),
            cfg.window
        )));
    }
    let mut codes = Vec::with_capacity(n_win * cfg.tokens_per_window());
    for w in 0..n_win {
        let win = rec.slice(w * cfg.window, cfg.window);
        codes.extend(tok.encode(&win.data)?.codes);
    }
    let grid = TokenGrid::new(
        n_win * cfg.latent_len(),
        cfg.n_neuro,
        cfg.levels,
        cfg.codebook_size,
        cfg.hash(),
        codes,
    )?;
    Ok(Tokenized {
        grid,
        dropped_samples: rec.samples() - n_win * cfg.window,
    })
}

/// Decodes a grid window by window back to a channel-major signal.
pub fn detokenize(grid: &TokenGrid, tok: &Tokenizer) -> Result<Vec<Vec<f32>>> {
    let cfg = &tok.config;
    if grid.streams != cfg.n_neuro || grid.levels != cfg.levels || grid.codebook_size != cfg.codebook_size {
        return Err(TokError::Shape(format!(
            "grid extents (H {}, Q {}, K {}) do not match the tokenizer",
            grid.streams, grid.levels, grid.codebook_size
        )));
    }
    if grid.rows % cfg.latent_len() != 0 {
        return Err(TokError::Length(format!(
            "{} rows is not a whole number of {}-row windows",
            grid.rows,
            cfg.latent_len()
        )));
    }
    let mut out = vec![Vec::with_capacity(grid.rows * cfg.hop()); cfg.channels];
    for chunk in grid.codes.chunks(cfg.tokens_per_window()) {
        let x = tok.decode_codes(chunk)?;
        for (c, row) in x.chunks(cfg.window).enumerate() {
            out[c].extend_from_slice(row);
        }
    }
    Ok(out)
}
