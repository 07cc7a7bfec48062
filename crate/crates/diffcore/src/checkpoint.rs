//! `BTCK` binary checkpoints.
//!
//! Layout (little-endian): magic `BTCK`, version `u32`, entry count `u32`,
//! then per entry a `u16` name length, the UTF-8 name, a `u8` rank, `rank`
//! `u32` extents and the `f32` payload. Optimizer entries are stored as
//! `optim.<param>.m1`, `optim.<param>.m2` and `optim.step`.

use std::path::Path;

use crate::error::{DiffError, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BTCK";
pub const VERSION: u32 = 1;
const OPTIM_PREFIX: &str = "optim.";

pub fn encode(entries: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(DiffError::Format {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(DiffError::Format {
            offset: 0,
            reason: "bad magic, expected BTCK".into(),
        });
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(DiffError::Format {
            offset: at,
            reason: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| DiffError::Format {
                offset: at + 2,
                reason: "name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let at = r.pos;
        let n: usize = shape.iter().product();
        if rank == 0 || n == 0 {
            return Err(DiffError::Format {
                offset: at,
                reason: format!("entry `{name}` has empty shape {shape:?}"),
            });
        }
        let payload = r.take(n * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| DiffError::Format {
            offset: at,
            reason: e.to_string(),
        })?;
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(DiffError::Format {
            offset: r.pos,
            reason: "trailing bytes after last entry".into(),
        });
    }
    Ok(entries)
}

pub fn write(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    std::fs::write(path, encode(entries))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    decode(&std::fs::read(path)?)
}

/// Parameters plus optional optimizer state as one entry list.
pub fn bundle(params: &ParamStore, opt: Option<&AdamW>) -> Vec<(String, Tensor<f32>)> {
    let mut entries: Vec<_> = params.iter().map(|(n, t)| (n.clone(), t.clone())).collect();
    if let Some(opt) = opt {
        for (n, t) in opt.state_entries() {
            let name = if n == "optim.step" {
                n
            } else {
                format!("{OPTIM_PREFIX}{n}")
            };
            entries.push((name, t));
        }
    }
    entries
}

/// Splits an entry list from [`bundle`] back into parameters and, when
/// present, optimizer state.
pub fn unbundle(
    entries: Vec<(String, Tensor<f32>)>,
    config: AdamWConfig,
) -> Result<(ParamStore, Option<AdamW>)> {
    let mut params = ParamStore::new();
    let mut opt_entries = Vec::new();
    for (n, t) in entries {
        if n == "optim.step" {
            opt_entries.push((n, t));
        } else if let Some(rest) = n.strip_prefix(OPTIM_PREFIX) {
            opt_entries.push((rest.to_string(), t));
        } else {
            params.insert(n, t);
        }
    }
    let opt = if opt_entries.is_empty() {
        None
    } else {
        Some(AdamW::restore(config, &opt_entries)?)
    };
    Ok((params, opt))
}
