//! `.shmc` bitstream container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header   magic "SHMC" | version u8 | model hash u32 | height u16 | width u16 | layer count u8
//! layer    id u8 | channels u16 | latent h u16 | latent w u16 | payload length u32 | payload
//! ```

use crate::error::{Error, Result};
use crate::tensor::LayerTag;

pub const MAGIC: [u8; 4] = *b"SHMC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 4 + 2 + 2 + 1;
pub const LAYER_RECORD_LEN: usize = 1 + 2 + 2 + 2 + 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRecord {
    pub layer: LayerTag,
    pub channels: u16,
    pub height: u16,
    pub width: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub version: u8,
    pub model_hash: u32,
    pub height: u16,
    pub width: u16,
    pub layers: Vec<LayerRecord>,
}

impl Container {
    pub fn layer(&self, tag: LayerTag) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.layer == tag)
    }

    pub fn byte_len(&self) -> usize {
        HEADER_LEN
            + self
                .layers
                .iter()
                .map(|l| LAYER_RECORD_LEN + l.payload.len())
                .sum::<usize>()
    }

    pub fn total_bits(&self) -> u64 {
        8 * self.byte_len() as u64
    }

    /// Bytes of the header plus the records of the listed layers only.
    pub fn byte_len_for(&self, tags: &[LayerTag]) -> usize {
        HEADER_LEN
            + self
                .layers
                .iter()
                .filter(|l| tags.contains(&l.layer))
                .map(|l| LAYER_RECORD_LEN + l.payload.len())
                .sum::<usize>()
    }

    pub fn pack(&self) -> Result<Vec<u8>> {
        if self.layers.is_empty() {
            return Err(Error::Bitstream("container needs at least one layer".into()));
        }
        if self.layers.len() > 255 {
            return Err(Error::Bitstream(format!(
                "{} layers exceed the 255-layer limit",
                self.layers.len()
            )));
        }
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.model_hash.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.push(self.layers.len() as u8);
        for l in &self.layers {
            let len = u32::try_from(l.payload.len()).map_err(|_| {
                Error::Bitstream(format!("payload of {} bytes too large", l.payload.len()))
            })?;
            out.push(l.layer.id());
            out.extend_from_slice(&l.channels.to_le_bytes());
            out.extend_from_slice(&l.height.to_le_bytes());
            out.extend_from_slice(&l.width.to_le_bytes());
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(&l.payload);
        }
        Ok(out)
    }

    pub fn unpack(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Bitstream("bad magic, not an SHMC stream".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Bitstream(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let model_hash = r.u32()?;
        let height = r.u16()?;
        let width = r.u16()?;
        let count = r.u8()?;
        if count == 0 {
            return Err(Error::Bitstream("container declares zero layers".into()));
        }
        let mut layers = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let layer = LayerTag::from_id(r.u8()?)?;
            let channels = r.u16()?;
            let lh = r.u16()?;
            let lw = r.u16()?;
            let len = r.u32()? as usize;
            let payload = r.take(len)?.to_vec();
            layers.push(LayerRecord {
                layer,
                channels,
                height: lh,
                width: lw,
                payload,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Bitstream(format!(
                "{} trailing bytes after last layer",
                bytes.len() - r.pos
            )));
        }
        Ok(Container {
            version,
            model_hash,
            height,
            width,
            layers,
        })
    }
}

/// Assemble and serialize a container from per-layer records.
pub fn pack_container(
    layers: Vec<LayerRecord>,
    height: usize,
    width: usize,
    model_hash: u32,
) -> Result<Vec<u8>> {
    let dim = |v: usize| {
        u16::try_from(v).map_err(|_| Error::Bitstream(format!("dimension {v} exceeds u16")))
    };
    if height == 0 || width == 0 {
        return Err(Error::Bitstream("image dimensions must be positive".into()));
    }
    Container {
        version: VERSION,
        model_hash,
        height: dim(height)?,
        width: dim(width)?,
        layers,
    }
    .pack()
}

pub fn unpack_container(bytes: &[u8]) -> Result<Container> {
    Container::unpack(bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Bitstream("container truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
