//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "EDTW" | version u32 | count u32
//! count × { name_len u32 | name utf-8 | rank u32 | dims u64×rank | dtype u8 | payload }
//! ```
//!
//! Dtype tags: 0 = f32, 1 = f64, 2 = i64.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"EDTW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl Payload {
    fn tag(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::F64(_) => 1,
            Payload::I64(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u64>,
    pub payload: Payload,
}

impl Entry {
    pub fn f32(name: impl Into<String>, dims: &[usize], data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dims: dims.iter().map(|&d| d as u64).collect(),
            payload: Payload::F32(data),
        }
    }

    pub fn f64(name: impl Into<String>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            dims: vec![data.len() as u64],
            payload: Payload::F64(data),
        }
    }

    pub fn i64(name: impl Into<String>, data: Vec<i64>) -> Self {
        Self {
            name: name.into(),
            dims: vec![data.len() as u64],
            payload: Payload::I64(data),
        }
    }
}

pub fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(e.payload.tag());
        match &e.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(format!("truncated at byte {}", self.pos));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Entry>, String> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err("bad magic, not a weight bank".into());
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(format!("unsupported bank version {version}"));
    }
    let count = c.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let n = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(n)?)
            .map_err(|_| format!("tensor name at byte {} is not UTF-8", c.pos))?
            .to_string();
        let rank = c.u32()? as usize;
        let dims = (0..rank).map(|_| c.u64()).collect::<Result<Vec<_>, _>>()?;
        let numel = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= (buf.len() as u64))
            .ok_or_else(|| format!("tensor `{name}` has implausible dims {dims:?}"))? as usize;
        let tag = c.take(1)?[0];
        let payload = match tag {
            0 => Payload::F32(
                c.take(numel * 4)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            1 => Payload::F64(
                c.take(numel * 8)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            2 => Payload::I64(
                c.take(numel * 8)?
                    .chunks_exact(8)
                    .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            t => return Err(format!("tensor `{name}` has unknown dtype tag {t}")),
        };
        out.push(Entry { name, dims, payload });
    }
    if c.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - c.pos));
    }
    Ok(out)
}

pub fn write(path: &Path, entries: &[Entry]) -> CliResult<()> {
    let bytes = encode(entries);
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> CliResult<Vec<Entry>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| CliError::io(path, e))?;
    decode(&buf).map_err(|m| CliError::format(path, m))
}
