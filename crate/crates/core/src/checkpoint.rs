//! `SHMCKPT` checkpoint files.
//!
//! ```text
//! magic "SHMCKPT" | version u8 | count u32
//! count x { name_len u16 | name utf-8 | dtype u8 (0 = f32) | rank u8 | dims u32 x rank | values f32 x prod(dims) }
//! crc32 u32 over every preceding byte
//! ```
//!
//! All integers little-endian. Entries are written in name order, so a
//! store saves to the same bytes regardless of insertion order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParameterStore;

pub const MAGIC: &[u8; 7] = b"SHMCKPT";
pub const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

pub fn to_bytes(store: &ParameterStore) -> Result<Vec<u8>> {
    let mut params: Vec<_> = store.iter().collect();
    params.sort_by(|a, b| a.name.cmp(&b.name));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("name too long: {}", p.name)))?;
        let rank = u8::try_from(p.shape.len())
            .map_err(|_| Error::Checkpoint(format!("rank too high: {}", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(DTYPE_F32);
        out.push(rank);
        for &d in &p.shape {
            let d = u32::try_from(d)
                .map_err(|_| Error::Checkpoint(format!("dimension too large: {}", p.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &p.values {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParameterStore> {
    if bytes.len() < MAGIC.len() + 1 + 4 + 4 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = bytes[MAGIC.len()];
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len() + 1,
    };
    let count = r.u32()?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("entry name is not utf-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Checkpoint(format!("{name}: unknown dtype {dtype}")));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        store
            .insert(&name, &shape, values)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected bytes after the last entry",
            body.len() - r.pos
        )));
    }
    Ok(store)
}

pub fn save_store(store: &ParameterStore, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(store)?).map_err(|e| Error::io(path, e))
}

pub fn load_store(path: &Path) -> Result<ParameterStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
