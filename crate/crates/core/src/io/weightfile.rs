//! Flat binary weight files.
//!
//! Layout, all little-endian: magic `PLKW`, u32 version (1), u32 tensor
//! count, then per tensor a u16 name length, the UTF-8 name, a u8 rank,
//! rank × u32 dims and the f32 payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::WeightStore;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PLKW";
pub const WEIGHTS_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Load {
                offset: self.pos,
                reason: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn load_weights(bytes: &[u8]) -> Result<WeightStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::Load {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version_at = r.pos;
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Load {
            offset: version_at,
            reason: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("tensor count")?;
    let mut store = WeightStore::new();
    for _ in 0..count {
        let start = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?).map_err(|_| Error::Load {
            offset: name_at,
            reason: "tensor name is not UTF-8".into(),
        })?;
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let payload_at = r.pos;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Load {
                offset: payload_at,
                reason: format!("dims {dims:?} overflow"),
            })?;
        let payload = r.take(n, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.insert(name, dims, data).map_err(|e| Error::Load {
            offset: start,
            reason: e.to_string(),
        })?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Load {
            offset: r.pos,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(store)
}

pub fn save_weights(store: &WeightStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let count = u32::try_from(store.len()).map_err(|_| Error::arg("too many tensors"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in store.iter() {
        let len = u16::try_from(name.len()).map_err(|_| Error::arg(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| Error::arg(format!("tensor `{name}` has too many dims")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| Error::arg(format!("dim {d} of `{name}` too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_weights(path: &Path) -> Result<WeightStore> {
    load_weights(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_weights(store: &WeightStore, path: &Path) -> Result<()> {
    fs::write(path, save_weights(store)?).map_err(|e| Error::io(path, e))
}
