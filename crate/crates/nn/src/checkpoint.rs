//! Versioned binary checkpoints: a map from parameter name to shape and
//! raw little-endian values, tagged with the hash of the tag vocabulary
//! the model was trained against.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  "CPTGCKPT"
//! version  u32
//! storage  u8       0 = f64, 1 = f32
//! vocab    32 bytes SHA-256 of the tag vocabulary
//! meta     u32 length + UTF-8 bytes (free-form, usually JSON)
//! count    u32
//! count x { u32 name length, name, u64 rows, u64 cols, values }
//! ```

use std::path::Path;

use ndarray::Array2;

use crate::error::{NnError, Result};
use crate::param::ParamStore;

const MAGIC: &[u8; 8] = b"CPTGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub storage: Storage,
    pub vocab_hash: [u8; 32],
    pub meta: String,
    pub tensors: Vec<(String, Array2<f64>)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NnError::Checkpoint("truncated payload".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, vocab_hash: [u8; 32], meta: String, storage: Storage) -> Self {
        let tensors = store
            .iter()
            .map(|(_, p)| {
                let value = match storage {
                    Storage::F64 => p.value.clone(),
                    Storage::F32 => p.value.mapv(|x| x as f32 as f64),
                };
                (p.name.clone(), value)
            })
            .collect();
        Self {
            storage,
            vocab_hash,
            meta,
            tensors,
        }
    }

    /// Copies every tensor into the same-named parameter of `store`.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        for (name, value) in &self.tensors {
            store.set_value(name, value.clone())?;
        }
        Ok(())
    }

    pub fn check_vocab(&self, expected: &[u8; 32]) -> Result<()> {
        if &self.vocab_hash != expected {
            return Err(NnError::VocabularyMismatch);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match self.storage {
            Storage::F64 => 0,
            Storage::F32 => 1,
        });
        out.extend_from_slice(&self.vocab_hash);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, value) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
            for &x in value.iter() {
                match self.storage {
                    Storage::F64 => out.extend_from_slice(&x.to_le_bytes()),
                    Storage::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let storage = match r.take(1)?[0] {
            0 => Storage::F64,
            1 => Storage::F32,
            other => return Err(NnError::Checkpoint(format!("unknown storage mode {other}"))),
        };
        let vocab_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let meta_len = r.u32()? as usize;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| NnError::Checkpoint("metadata is not UTF-8".into()))?;
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| NnError::Checkpoint("tensor too large".into()))?;
            let width = if storage == Storage::F64 { 8 } else { 4 };
            let raw = r.take(n.checked_mul(width).ok_or_else(|| NnError::Checkpoint("tensor too large".into()))?)?;
            let values: Vec<f64> = match storage {
                Storage::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                Storage::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            };
            let value = Array2::from_shape_vec((rows, cols), values).expect("length checked");
            tensors.push((name, value));
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            storage,
            vocab_hash,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", array![[1.0, 2.5], [-3.0, 0.1]]);
        s.add("b", array![[std::f64::consts::PI]]);
        s
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let s = store();
        let ck = Checkpoint::from_store(&s, [7; 32], "{}".into(), Storage::F64);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut fresh = ParamStore::new();
        fresh.zeros("a", 2, 2);
        fresh.zeros("b", 1, 1);
        back.restore_into(&mut fresh).unwrap();
        assert_eq!(fresh.value(fresh.id("b").unwrap())[[0, 0]], std::f64::consts::PI);
    }

    #[test]
    fn f32_mode_rounds_values() {
        let s = store();
        let ck = Checkpoint::from_store(&s, [0; 32], String::new(), Storage::F32);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.tensors[1].1[[0, 0]], std::f64::consts::PI as f32 as f64);
        assert_eq!(back, ck);
    }

    #[test]
    fn errors_on_truncation_version_and_vocab() {
        let ck = Checkpoint::from_store(&store(), [1; 32], String::new(), Storage::F64);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        let err = Checkpoint::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
        assert!(matches!(ck.check_vocab(&[2; 32]), Err(NnError::VocabularyMismatch)));
        assert!(ck.check_vocab(&[1; 32]).is_ok());
    }
}
