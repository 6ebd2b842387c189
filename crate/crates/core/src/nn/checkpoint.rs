//! Binary named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"FLCK"
//! version  u8            (currently 1)
//! meta     u32 length + UTF-8 bytes (free-form, JSON by convention)
//! count    u32
//! per tensor:
//!   name   u32 length + UTF-8 bytes
//!   rank   u8
//!   dims   rank x u32
//!   values product(dims) x f64
//! ```

use super::params::ModelParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FLCK";
pub const VERSION: u8 = 1;

pub fn encode(params: &ModelParams, meta: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Decodes a checkpoint into its parameters and metadata string.
pub fn decode(bytes: &[u8]) -> Result<(ModelParams, String)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let meta = r.string()?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((ModelParams::new(entries)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{init_params, Init, ParamSpec};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..10_000, rows in 1usize..5, cols in 1usize..5, meta in ".{0,20}") {
            let specs = vec![
                ParamSpec::new("a.weight", &[rows, cols], Init::Glorot),
                ParamSpec::new("a.bias", &[cols], Init::Normal(1.0)),
                ParamSpec::new("u", &[cols, 2, rows], Init::Normal(3.0)),
            ];
            let p = init_params(&specs, seed).unwrap();
            let (q, m) = decode(&encode(&p, &meta)).unwrap();
            prop_assert_eq!(m, meta);
            prop_assert_eq!(p, q);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"nope").is_err());
        let p = ModelParams::new(vec![("x".into(), Tensor::row(&[1.0]))]).unwrap();
        let mut bytes = encode(&p, "");
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(_))));
        let bytes = encode(&p, "");
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
