//! `MEGR` recording files (little-endian): magic, version `u32`, fs `f32`,
//! channels `u32`, samples `u64`, task `u8`, session id and subject id as
//! `u16`-length-prefixed UTF-8, then `C·T` `f32` samples channel-major.

use std::path::Path;

use crate::error::{Result, SynthError};
use crate::recording::{Recording, TaskType};

pub const MAGIC: &[u8; 4] = b"MEGR";
pub const VERSION: u32 = 1;

pub fn encode_recording(rec: &Recording) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + rec.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rec.fs.to_le_bytes());
    out.extend_from_slice(&(rec.channels as u32).to_le_bytes());
    out.extend_from_slice(&(rec.samples() as u64).to_le_bytes());
    out.push(rec.task.code());
    for s in [&rec.session_id, &rec.subject_id] {
        out.extend_from_slice(&(s.len() as u16).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    for &v in &rec.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, offset: usize, reason: impl Into<String>) -> Result<T> {
        Err(SynthError::Format {
            offset,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.err(self.pos, format!("truncated while reading {what}"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = u16::from_le_bytes(self.array(what)?) as usize;
        let at = self.pos;
        let bytes = self.take(len, what)?;
        match std::str::from_utf8(bytes) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => self.err(at, format!("{what} is not UTF-8")),
        }
    }
}

pub fn decode_recording(bytes: &[u8]) -> Result<Recording> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if &c.array::<4>("magic")? != MAGIC {
        return c.err(0, "bad magic, expected MEGR");
    }
    let version = u32::from_le_bytes(c.array("version")?);
    if version != VERSION {
        return c.err(4, format!("unsupported version {version}"));
    }
    let fs = f32::from_le_bytes(c.array("fs")?);
    let channels = u32::from_le_bytes(c.array("channel count")?) as usize;
    let samples = u64::from_le_bytes(c.array("sample count")?) as usize;
    let at = c.pos;
    let task = TaskType::from_code(c.array::<1>("task")?[0]);
    let Some(task) = task else {
        return c.err(at, "unknown task code");
    };
    let session_id = c.string("session id")?;
    let subject_id = c.string("subject id")?;
    let n = channels
        .checked_mul(samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or(SynthError::Format {
            offset: at,
            reason: "sample count overflows".into(),
        })?;
    let payload = c.take(n, "samples")?;
    if c.pos != bytes.len() {
        return c.err(c.pos, "trailing bytes after samples");
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Recording {
        data,
        channels,
        fs,
        session_id,
        subject_id,
        task,
    })
}

pub fn write_recording(rec: &Recording, path: &Path) -> Result<()> {
    std::fs::write(path, encode_recording(rec))?;
    Ok(())
}

pub fn read_recording(path: &Path) -> Result<Recording> {
    decode_recording(&std::fs::read(path)?)
}
