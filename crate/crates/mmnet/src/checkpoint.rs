//! Binary checkpoint of named tensors.
//!
//! Layout (little-endian): `MMNETCK1`, u32 version, u32 record count, then per
//! record a u16 name length, the UTF-8 name, a u8 rank, `rank` u32 extents and
//! the values as f32. Trailer: u32 iteration, u64 seed.

use std::path::Path;

use mmnet_core::{ParamStore, Tensor};

use crate::error::RunError;

pub const MAGIC: &[u8; 8] = b"MMNETCK1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated {what} at byte {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("record `{name}`: element count overflows")]
    DimensionOverflow { name: String },
    #[error("record name at byte {0} is not UTF-8")]
    BadName(usize),
    #[error("{0} trailing bytes after the trailer")]
    Trailing(usize),
    #[error("name `{0}` longer than 65535 bytes")]
    NameTooLong(String),
    #[error("tensor `{name}` does not fit the format: {reason}")]
    Unrepresentable { name: String, reason: &'static str },
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<(String, Tensor)>,
    pub iteration: u32,
    pub seed: u64,
}

impl Checkpoint {
    /// Snapshot of every parameter of `store`, in store order.
    pub fn from_params(store: &ParamStore, iteration: u32, seed: u64) -> Self {
        let records = store
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        Self {
            records,
            iteration,
            seed,
        }
    }

    /// Copies record values into `store`; names, order and shapes must match.
    pub fn apply(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        store
            .load_values(self.records.iter().map(|(n, t)| (n.as_str(), t)))
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))
    }

    pub fn encode(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count =
            u32::try_from(self.records.len()).map_err(|_| CheckpointError::Unrepresentable {
                name: String::new(),
                reason: "too many records",
            })?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.records {
            let len = u16::try_from(name.len())
                .map_err(|_| CheckpointError::NameTooLong(name.clone()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let bad = |reason| CheckpointError::Unrepresentable {
                name: name.clone(),
                reason,
            };
            let rank = u8::try_from(t.rank()).map_err(|_| bad("rank above 255"))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| bad("extent above u32"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = r.u32("record count")?;
        let mut records = Vec::new();
        for _ in 0..count {
            let len = usize::from(u16::from_le_bytes(r.array("name length")?));
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| CheckpointError::BadName(at))?
                .to_string();
            let rank = r.take(1, "rank")?[0];
            let mut shape = Vec::with_capacity(usize::from(rank));
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(4).is_some())
                .ok_or_else(|| CheckpointError::DimensionOverflow { name: name.clone() })?;
            let payload = r.take(n * 4, "tensor values")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
                .collect();
            let t = Tensor::new(shape, data).expect("element count checked");
            records.push((name, t));
        }
        let iteration = r.u32("iteration")?;
        let seed = u64::from_le_bytes(r.array("seed")?);
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - r.pos));
        }
        Ok(Self {
            records,
            iteration,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let bytes = self.encode().map_err(|source| RunError::Checkpoint {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, bytes).map_err(|e| RunError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
        Self::decode(&bytes).map_err(|source| RunError::Checkpoint {
            path: path.to_path_buf(),
            source,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated {
                what,
                offset: self.bytes.len(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}
