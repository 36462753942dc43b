//! Binary checkpoint container.
//!
//! Layout (all integers u32 little-endian):
//!
//! ```text
//! "SEAUCKPT" | version | json_len | json (UTF-8) | n_entries |
//!   n_entries x ( name_len | name | rank | dims[rank] | f32 LE values )
//! ```
//!
//! The JSON blob carries the architecture config and training state.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEAUCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            config,
            tensors: Vec::new(),
        }
    }

    /// Snapshot of every parameter in `store`.
    pub fn from_store(store: &ParamStore<f32>, config: serde_json::Value) -> Self {
        let tensors = store
            .entries()
            .map(|(_, e)| (e.name.clone(), e.value.clone()))
            .collect();
        Self { config, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        self.tensors.push((name.into(), tensor));
    }

    /// Copies every tensor whose name starts with `prefix` into `store`.
    ///
    /// Every store parameter under `prefix` must be present with the same
    /// shape; otherwise nothing is copied and the error lists each
    /// mismatched tensor.
    pub fn load_into(&self, store: &mut ParamStore<f32>, prefix: &str) -> Result<usize> {
        let mut problems = Vec::new();
        let mut updates = Vec::new();
        for (_, e) in store.entries().filter(|(_, e)| e.name.starts_with(prefix)) {
            match self.get(&e.name) {
                None => problems.push(format!("{} missing", e.name)),
                Some(t) if t.shape() != e.value.shape() => problems.push(format!(
                    "{}: checkpoint {:?} vs model {:?}",
                    e.name,
                    t.shape(),
                    e.value.shape()
                )),
                Some(t) => updates.push((e.name.clone(), t.clone())),
            }
        }
        for (name, _) in self.tensors.iter().filter(|(n, _)| n.starts_with(prefix)) {
            if store.id(name).is_none() {
                problems.push(format!("{name} not in model"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(format!(
                "incompatible tensors: {}",
                problems.join("; ")
            )));
        }
        let n = updates.len();
        for (name, t) in updates {
            store.assign(&name, t)?;
        }
        Ok(n)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.config).expect("json value serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let json_len = r.u32()? as usize;
        let config = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::Checkpoint(format!("config blob: {e}")))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r
                .take(numel * 4)
                .map_err(|_| Error::Checkpoint(format!("tensor `{name}` truncated")))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
