//! Binary parameter checkpoints.
//!
//! Layout (all integers `u32` little-endian):
//!
//! ```text
//! "CFOCKPT1"
//! repeat { name_len, name bytes (UTF-8), rank, extents[rank], f32 data (LE) }
//! "MANIFEST", record_count
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Module, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CFOCKPT1";
pub const FOOTER: &[u8; 8] = b"MANIFEST";

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub tensor: Tensor<f32>,
}

pub fn encode<'a, T: Real>(records: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let mut count: u32 = 0;
    for (name, tensor) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &e in tensor.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        count += 1;
    }
    out.extend_from_slice(FOOTER);
    out.extend_from_slice(&count.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    end: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.end {
            return Err(Error::Checkpoint(format!("truncated record at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < MAGIC.len() + FOOTER.len() + 4 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let end = bytes.len() - FOOTER.len() - 4;
    if &bytes[end..end + 8] != FOOTER {
        return Err(Error::Checkpoint("missing manifest footer".into()));
    }
    let expected = u32::from_le_bytes(bytes[end + 8..].try_into().expect("4 bytes")) as usize;
    let mut cur = Cursor { buf: bytes, pos: 8, end };
    let mut records = Vec::with_capacity(expected);
    while cur.pos < end {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
            .to_owned();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push(Record {
            name,
            tensor: Tensor::from_vec(&shape, data)?,
        });
    }
    if records.len() != expected {
        return Err(Error::Checkpoint(format!(
            "manifest lists {expected} records, found {}",
            records.len()
        )));
    }
    Ok(records)
}

pub fn save_module<T: Real, M: Module<T>>(path: &Path, module: &M) -> Result<()> {
    let params = module.params();
    let bytes = encode(params.iter().map(|p| (p.name.as_str(), &p.value)));
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Overwrites every parameter of `module` from records with matching name and
/// shape. Missing or mis-shaped records are errors; extra records are ignored.
pub fn load_into<T: Real, M: Module<T>>(module: &mut M, records: &[Record]) -> Result<()> {
    let mut err = None;
    module.visit_params_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        match records.iter().find(|r| r.name == p.name) {
            Some(r) if r.tensor.shape() == p.value.shape() => {
                p.value = r.tensor.cast();
            }
            Some(r) => {
                err = Some(Error::Checkpoint(format!(
                    "shape mismatch for {}: {:?} vs {:?}",
                    p.name,
                    r.tensor.shape(),
                    p.value.shape()
                )))
            }
            None => err = Some(Error::Checkpoint(format!("missing record {}", p.name))),
        }
    });
    err.map_or(Ok(()), Err)
}

pub fn load_module<T: Real, M: Module<T>>(path: &Path, module: &mut M) -> Result<()> {
    let bytes = fs::read(path)?;
    load_into(module, &decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::from_vec(&[2], vec![1.0f32, -2.0]).unwrap();
        let bytes = encode([("ab", &t)]);
        let mut want = b"CFOCKPT1".to_vec();
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(b"ab");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        want.extend_from_slice(b"MANIFEST");
        want.extend_from_slice(&1u32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(decode(b"nonsense").is_err());
        let t = Tensor::from_vec(&[3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let mut bytes = encode([("x", &t)]);
        let n = bytes.len();
        bytes[n - 4] = 7;
        assert!(decode(&bytes).is_err());
        let good = encode([("x", &t)]);
        let mut truncated = good[..good.len() - 16].to_vec();
        truncated.extend_from_slice(&good[good.len() - 12..]);
        assert!(decode(&truncated).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shape in proptest::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::<f32>::uniform(&shape, 3.0, &mut rng);
            let back = decode(&encode([("p.q", &t)])).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].name, "p.q");
            prop_assert_eq!(&back[0].tensor, &t);
        }
    }
}
