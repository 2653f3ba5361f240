//! The `RENC` named-tensor container used for encoder weights and entity
//! index files.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic "RENC" | version u32
//! per tensor, in fixed declared order:
//!   name length u16 | name bytes (UTF-8)
//!   rank u8 | dims u32 * rank
//!   f32 data, little-endian, product(dims) values
//! ```
//!
//! There is no tensor count; readers consume tensors until end of input.
//! Saves are byte-deterministic, which is what makes weight reproducibility
//! testable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RENC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let expected: usize = dims.iter().map(|&d| d as usize).product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name:?}: dims {dims:?} imply {expected} values, got {}",
                data.len()
            )));
        }
        Ok(NamedTensor { name, dims, data })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub tensors: Vec<NamedTensor>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for t in &self.tensors {
            let name_bytes = t.name.as_bytes();
            if name_bytes.len() > u16::MAX as usize {
                return Err(Error::Validation(format!("tensor name too long: {:?}", t.name)));
            }
            if t.dims.len() > u8::MAX as usize {
                return Err(Error::Validation(format!("tensor rank too large: {:?}", t.name)));
            }
            w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
            w.write_all(name_bytes)?;
            w.write_all(&[t.dims.len() as u8])?;
            for d in &t.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            for v in &t.data {
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
            .map_err(|_| Error::Truncated("tensor file header"))?;
        if &magic != MAGIC {
            return Err(Error::BadMagic { expected: "RENC" });
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)
            .map_err(|_| Error::Truncated("tensor file version"))?;
        let version = u32::from_le_bytes(buf4);
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let mut tensors = Vec::new();
        loop {
            let mut buf2 = [0u8; 2];
            match r.read(&mut buf2)? {
                0 => break,
                1 => {
                    r.read_exact(&mut buf2[1..2])
                        .map_err(|_| Error::Truncated("tensor name length"))?;
                }
                _ => {}
            }
            let name_len = u16::from_le_bytes(buf2) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)
                .map_err(|_| Error::Truncated("tensor name"))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Validation("tensor name is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)
                .map_err(|_| Error::Truncated("tensor rank"))?;
            let mut dims = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                r.read_exact(&mut buf4)
                    .map_err(|_| Error::Truncated("tensor dims"))?;
                dims.push(u32::from_le_bytes(buf4));
            }
            let len: usize = dims.iter().map(|&d| d as usize).product();
            let mut data = vec![0f32; len];
            for v in &mut data {
                r.read_exact(&mut buf4)
                    .map_err(|_| Error::Truncated("tensor data"))?;
                *v = f32::from_le_bytes(buf4);
            }
            tensors.push(NamedTensor { name, dims, data });
        }
        Ok(TensorFile { tensors })
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

/// Packs a u64 fingerprint into a rank-1 tensor of four exactly-representable
/// f32 values (one per 16-bit chunk, low chunk first).
pub fn fingerprint_to_tensor(name: &str, fp: u64) -> NamedTensor {
    let data: Vec<f32> = (0..4)
        .map(|i| ((fp >> (16 * i)) & 0xffff) as f32)
        .collect();
    NamedTensor::new(name, vec![4], data).expect("shape is consistent")
}

pub fn fingerprint_from_tensor(t: &NamedTensor) -> Result<u64> {
    if t.dims != [4] {
        return Err(Error::ShapeMismatch(format!(
            "fingerprint tensor {:?} must have dims [4], got {:?}",
            t.name, t.dims
        )));
    }
    let mut fp = 0u64;
    for (i, &v) in t.data.iter().enumerate() {
        if !(0.0..=65535.0).contains(&v) || v.fract() != 0.0 {
            return Err(Error::Validation(format!(
                "fingerprint tensor {:?} holds a non-chunk value {v}",
                t.name
            )));
        }
        fp |= (v as u64) << (16 * i);
    }
    Ok(fp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorFile {
        TensorFile {
            tensors: vec![
                NamedTensor::new("a", vec![2, 3], vec![1.0, -2.5, 0.0, 4.0, 5.0, -6.25]).unwrap(),
                NamedTensor::new("b", vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            ],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let tf = sample();
        let bytes = tf.to_bytes();
        let loaded = TensorFile::from_bytes(&bytes).unwrap();
        assert_eq!(loaded, tf);
        assert_eq!(loaded.to_bytes(), bytes);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            TensorFile::from_bytes(&bytes),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_data() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            TensorFile::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn shape_check_on_construction() {
        assert!(NamedTensor::new("x", vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn fingerprint_roundtrip() {
        for fp in [0u64, 1, 0xdeadbeefcafe1234, u64::MAX] {
            let t = fingerprint_to_tensor("fp", fp);
            assert_eq!(fingerprint_from_tensor(&t).unwrap(), fp);
        }
    }
}
