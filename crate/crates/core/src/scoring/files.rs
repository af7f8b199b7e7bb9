//! Binary embedding and head files. All integers and floats little-endian.
//!
//! Embeddings: `b"QDEM"`, version `u32`, dim `u32`, count `u64`, then `count`
//! records of key length `u32`, UTF-8 key bytes and `dim` `f64` values.
//!
//! Head: `b"QDHD"`, version `u32`, dim `u32`, activation `u8` (0 GELU,
//! 1 tanh), then the parameters in [`InteractionHead::parameters`] order as
//! `f64`.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::head::{Activation, InteractionHead};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"QDEM";
pub const HEAD_MAGIC: [u8; 4] = *b"QDHD";
pub const FORMAT_VERSION: u32 = 1;

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn expect_header<R: Read>(r: &mut R, magic: [u8; 4]) -> Result<()> {
    if read_array::<4, _>(r)? != magic {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

/// Embeddings keyed by query text or document url.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f64>)>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, key: String, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        self.entries.push((key, values));
        Ok(())
    }

    pub fn index(&self) -> HashMap<&str, &[f64]> {
        self.entries
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
            .collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&EMBEDDING_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (key, values) in &self.entries {
            w.write_all(&(key.len() as u32).to_le_bytes())?;
            w.write_all(key.as_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        expect_header(&mut r, EMBEDDING_MAGIC)?;
        let dim = read_u32(&mut r)? as usize;
        let count = u64::from_le_bytes(read_array(&mut r)?);
        let mut table = EmbeddingTable::new(dim);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut key = vec![0u8; len];
            r.read_exact(&mut key)
                .map_err(|e| Error::Format(format!("truncated key: {e}")))?;
            let key = String::from_utf8(key).map_err(|_| Error::Format("key is not UTF-8".into()))?;
            let values = (0..dim).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            table.entries.push((key, values));
        }
        Ok(table)
    }
}

pub fn write_head<W: Write>(head: &InteractionHead, mut w: W) -> Result<()> {
    w.write_all(&HEAD_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(head.dim as u32).to_le_bytes())?;
    w.write_all(&[head.activation.code()])?;
    for p in head.parameters() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_head<R: Read>(mut r: R) -> Result<InteractionHead> {
    expect_header(&mut r, HEAD_MAGIC)?;
    let dim = read_u32(&mut r)? as usize;
    let [code] = read_array::<1, _>(&mut r)?;
    let activation = Activation::from_code(code).ok_or_else(|| Error::Format(format!("unknown activation {code}")))?;
    let mut head = InteractionHead::zeros(dim, activation);
    let params = (0..head.parameter_count())
        .map(|_| read_f64(&mut r))
        .collect::<Result<Vec<_>>>()?;
    head.set_parameters(&params)?;
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_round_trip() {
        let mut t = EmbeddingTable::new(2);
        t.push("jak uvařit vajíčko".into(), vec![1.5, -0.25]).unwrap();
        t.push("https://a.cz/".into(), vec![f64::MIN_POSITIVE, 3.0]).unwrap();
        assert!(t.push("bad".into(), vec![1.0]).is_err());
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"QDEM");
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + (4 + "jak uvařit vajíčko".len() + 16) + (4 + 13 + 16));
        assert_eq!(EmbeddingTable::read(buf.as_slice()).unwrap(), t);
        assert!(matches!(EmbeddingTable::read(&buf[..buf.len() - 1]), Err(Error::Format(_))));
    }

    #[test]
    fn head_round_trip() {
        let head = InteractionHead::random(3, Activation::Tanh, 9);
        let mut buf = Vec::new();
        write_head(&head, &mut buf).unwrap();
        assert_eq!(read_head(buf.as_slice()).unwrap(), head);
        buf[0] = b'X';
        assert!(read_head(buf.as_slice()).is_err());
    }
}
