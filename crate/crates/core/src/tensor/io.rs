//! Flat little-endian weight container.
//!
//! Layout: magic `SRTW`, `u32` version, `u32` entry count, then per entry a
//! `u16` name length, UTF-8 name, `u8` rank, `u32` dims and `f64` payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SRTW";
pub const VERSION: u32 = 1;

/// One named array in a container.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("entry name too long: {}", e.name)))?;
        let rank = u8::try_from(e.shape.len()).map_err(|_| Error::invalid(format!("rank too large: {}", e.name)))?;
        if e.shape.iter().product::<usize>() != e.data.len() {
            return Err(Error::shape("encode", format!("{}: shape {:?} vs {} values", e.name, e.shape, e.data.len())));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &e.shape {
            let d = u32::try_from(d).map_err(|_| Error::invalid(format!("dimension too large: {}", e.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.path,
                format!("truncated at byte {} while reading {what}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8], path: &Path) -> Result<Vec<Entry>> {
    let mut c = Cursor { buf, pos: 0, path };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, "bad magic, expected SRTW"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = c.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::format(path, format!("entry name at byte {at} is not UTF-8")))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let shape = (0..rank)
            .map(|_| c.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = c.take(n * 8, &format!("payload of {name}"))?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    if c.pos != buf.len() {
        return Err(Error::format(path, format!("{} trailing bytes after last entry", buf.len() - c.pos)));
    }
    Ok(entries)
}

pub fn save(path: &Path, entries: &[Entry]) -> Result<()> {
    let bytes = encode(entries)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf, path)
}
