//! Flat, ordered, named tensor records.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "CQCKPT01"
//! count        u64      number of records
//! per record:
//!   name_len   u32
//!   name       name_len bytes of UTF-8
//!   rank       u32
//!   dims       rank x u64
//!   data       product(dims) x f64   (one value when rank == 0)
//! ```
//!
//! Records keep insertion order, so two checkpoints of the same model can be
//! compared record by record (`crossq` has no opinion on the tool used).

use std::path::Path;

use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CQCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    records: Vec<Record>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push_raw(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.records.push(Record {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        self.push_raw(name, tensor.shape(), tensor.to_f64_vec());
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.push_raw(name, &[], vec![value]);
    }

    pub fn extend(&mut self, prefix: &str, other: Checkpoint) {
        for mut r in other.records {
            r.name = format!("{prefix}{}", r.name);
            self.records.push(r);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let r = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing record `{name}`")))?;
        Ok(Tensor::from_f64(&r.shape, &r.data)?)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let r = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing record `{name}`")))?;
        match r.data[..] {
            [x] => Ok(x),
            _ => Err(Error::Checkpoint(format!("record `{name}` is not a scalar"))),
        }
    }

    /// Records whose names start with `prefix`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> Checkpoint {
        Checkpoint {
            records: self
                .records
                .iter()
                .filter_map(|r| {
                    r.name.strip_prefix(prefix).map(|rest| Record {
                        name: rest.to_string(),
                        ..r.clone()
                    })
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &r.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let count = cur.u64()?;
        let mut records = Vec::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|e| Error::Checkpoint(format!("record name: {e}")))?
                .to_string();
            let rank = cur.u32()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = (0..numel)
                .map(|_| cur.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                .collect::<Result<Vec<_>>>()?;
            records.push(Record { name, shape, data });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_documented_layout() {
        let mut ck = Checkpoint::new();
        ck.push_scalar("s", 1.5);
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], b"CQCKPT01");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
        assert_eq!(bytes[20], b's');
        assert_eq!(u32::from_le_bytes(bytes[21..25].try_into().unwrap()), 0);
        assert_eq!(f64::from_le_bytes(bytes[25..33].try_into().unwrap()), 1.5);
        assert_eq!(bytes.len(), 33);
    }

    #[test]
    fn truncated_input_is_rejected() {
        let mut ck = Checkpoint::new();
        ck.push("w", &Tensor::<f64>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap());
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(
            entries in prop::collection::vec(
                ("[a-z.]{1,12}", prop::collection::vec(1usize..4, 0..3), any::<u64>()),
                0..6,
            )
        ) {
            let mut ck = Checkpoint::new();
            for (name, shape, seed) in &entries {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|i| f64::from_bits(seed.wrapping_add(i as u64) >> 2)).collect();
                ck.push_raw(name.clone(), shape, data);
            }
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), ck.to_bytes());
        }
    }
}
