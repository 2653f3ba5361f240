//! Pseudo-audio frame sequences and the `RFRM` binary store.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "RFRM" | version u32 | dim u32 | record count u32
//! per record: key length u16 | key bytes (UTF-8)
//!             frame count u32 | frame count * dim f32 values, row-major
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so write/read roundtrips are
//! bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RFRM";
const VERSION: u32 = 1;

/// A variable-length sequence of fixed-dimension feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    dim: usize,
    data: Vec<f32>,
}

impl FrameSequence {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("frame dim must be positive".into()));
        }
        if data.is_empty() {
            return Err(Error::Validation(
                "frame sequence must contain at least one frame".into(),
            ));
        }
        if data.len() % dim != 0 {
            return Err(Error::Validation(format!(
                "frame data length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "frame sequence contains a non-finite value".into(),
            ));
        }
        Ok(FrameSequence { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// A keyed collection of frame sequences sharing one dimension. Keys follow
/// the `dialog_id/turn_index` convention.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStore {
    dim: usize,
    map: BTreeMap<String, FrameSequence>,
}

impl FrameStore {
    pub fn new(dim: usize) -> Self {
        FrameStore {
            dim,
            map: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, key: String, seq: FrameSequence) -> Result<()> {
        if seq.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: seq.dim(),
            });
        }
        if self.map.contains_key(&key) {
            return Err(Error::Validation(format!("duplicate frames key {key:?}")));
        }
        self.map.insert(key, seq);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&FrameSequence> {
        self.map.get(key).ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.map.len() as u32).to_le_bytes())?;
        for (key, seq) in &self.map {
            let key_bytes = key.as_bytes();
            if key_bytes.len() > u16::MAX as usize {
                return Err(Error::Validation(format!("frames key too long: {key:?}")));
            }
            w.write_all(&(key_bytes.len() as u16).to_le_bytes())?;
            w.write_all(key_bytes)?;
            w.write_all(&(seq.n_frames() as u32).to_le_bytes())?;
            for v in seq.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("in-memory write succeeds");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Truncated("frame store header"))?;
        if &magic != MAGIC {
            return Err(Error::BadMagic { expected: "RFRM" });
        }
        let version = read_u32(r, "frame store version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let dim = read_u32(r, "frame store dim")? as usize;
        if dim == 0 {
            return Err(Error::Validation("frame store dim must be positive".into()));
        }
        let count = read_u32(r, "frame store record count")?;
        let mut store = FrameStore::new(dim);
        for _ in 0..count {
            let key_len = read_u16(r, "frames key length")? as usize;
            let mut key_bytes = vec![0u8; key_len];
            r.read_exact(&mut key_bytes)
                .map_err(|_| Error::Truncated("frames key"))?;
            let key = String::from_utf8(key_bytes)
                .map_err(|_| Error::Validation("frames key is not UTF-8".into()))?;
            let n_frames = read_u32(r, "frame count")? as usize;
            let mut data = vec![0f32; n_frames * dim];
            let mut buf = [0u8; 4];
            for v in &mut data {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Truncated("frame data"))?;
                *v = f32::from_le_bytes(buf);
            }
            let seq = FrameSequence::new(dim, data)?;
            store.insert(key, seq)?;
        }
        let mut trailing = [0u8; 1];
        match r.read(&mut trailing)? {
            0 => Ok(store),
            _ => Err(Error::Validation(
                "trailing bytes after last frame record".into(),
            )),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        Self::read_from(&mut cursor)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn read_u32(r: &mut impl Read, what: &'static str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Truncated(what))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16(r: &mut impl Read, what: &'static str) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf).map_err(|_| Error::Truncated(what))?;
    Ok(u16::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> FrameStore {
        let mut store = FrameStore::new(16);
        for key in ["d0/0", "d0/2"] {
            let data: Vec<f32> = (0..32).map(|i| (i as f32) * 0.25 - 3.0).collect();
            store
                .insert(key.to_string(), FrameSequence::new(16, data).unwrap())
                .unwrap();
        }
        store
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let store = sample_store();
        let bytes = store.to_bytes();
        let loaded = FrameStore::from_bytes(&bytes).unwrap();
        assert_eq!(loaded, store);
        assert_eq!(loaded.to_bytes(), bytes);
    }

    #[test]
    fn missing_key_is_an_error() {
        let store = sample_store();
        assert!(matches!(store.get("d0/4"), Err(Error::MissingKey(_))));
    }

    #[test]
    fn dim_mismatch_on_insert() {
        let mut store = FrameStore::new(16);
        let seq = FrameSequence::new(8, vec![0.0; 8]).unwrap();
        assert!(matches!(
            store.insert("k".into(), seq),
            Err(Error::DimMismatch { expected: 16, found: 8 })
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let store = sample_store();
        let mut bytes = store.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            FrameStore::from_bytes(&bytes),
            Err(Error::BadMagic { .. })
        ));

        let bytes = store.to_bytes();
        assert!(matches!(
            FrameStore::from_bytes(&bytes[..bytes.len() - 5]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn version_mismatch() {
        let store = sample_store();
        let mut bytes = store.to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            FrameStore::from_bytes(&bytes),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_values() {
        assert!(FrameSequence::new(2, vec![0.0, f32::NAN]).is_err());
        assert!(FrameSequence::new(2, vec![]).is_err());
        assert!(FrameSequence::new(2, vec![0.0; 3]).is_err());
    }
}
