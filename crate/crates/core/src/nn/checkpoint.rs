//! Named-tensor archives.
//!
//! Layout: one JSON manifest line, `\n`, then the tensors' little-endian
//! payloads back to back at the offsets the manifest lists.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use crate::{Error, Result};

const FORMAT: &str = "mitral-ckpt";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    nbytes: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    tensors: Vec<Entry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Tensors plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: IndexMap<String, Tensor<f32>>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            tensors: IndexMap::new(),
            meta,
        }
    }

    /// Adds every tensor of `store` under `prefix`.
    pub fn put_store(&mut self, prefix: &str, store: &ParamStore<f32>) {
        for (name, t) in store.iter() {
            self.tensors.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Extracts the tensors under `prefix`, in order, with the prefix removed.
    pub fn take_store(&self, prefix: &str) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        for (name, t) in &self.tensors {
            if let Some(rest) = name.strip_prefix(prefix) {
                s.insert(rest, t.clone());
            }
        }
        s
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let nbytes = t.len() * f32::BYTES;
                let e = Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: f32::DTYPE.into(),
                    offset,
                    nbytes,
                };
                offset += nbytes;
                e
            })
            .collect();
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            tensors,
            meta: self.meta.clone(),
        };
        let mut bytes =
            serde_json::to_vec(&manifest).map_err(|e| Error::format("checkpoint", e))?;
        bytes.push(b'\n');
        bytes.reserve(offset);
        for t in self.tensors.values() {
            for &v in t.data() {
                v.write_le(&mut bytes);
            }
        }
        w.write_all(&bytes)
            .map_err(|e| Error::io("<checkpoint>", e))
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = Vec::new();
        r.read_until(b'\n', &mut header)
            .map_err(|e| Error::io("<checkpoint>", e))?;
        if header.last() != Some(&b'\n') {
            return Err(Error::format("checkpoint", "missing manifest line"));
        }
        let m: Manifest = serde_json::from_slice(&header[..header.len() - 1])
            .map_err(|e| Error::format("checkpoint", e))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported format {} v{}", m.format, m.version),
            ));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)
            .map_err(|e| Error::io("<checkpoint>", e))?;
        let mut tensors = IndexMap::new();
        for e in m.tensors {
            if e.dtype != f32::DTYPE {
                return Err(Error::format(
                    "checkpoint",
                    format!("unsupported dtype {}", e.dtype),
                ));
            }
            let n: usize = e.shape.iter().product();
            if e.nbytes != n * 4 || e.offset + e.nbytes > payload.len() {
                return Err(Error::SizeMismatch {
                    expected: e.offset + n * 4,
                    found: payload.len(),
                });
            }
            let data: Vec<f32> = payload[e.offset..e.offset + e.nbytes]
                .chunks_exact(4)
                .map(f32::read_le)
                .collect();
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            tensors.insert(e.name, Tensor::new(e.shape, data)?);
        }
        Ok(Self {
            tensors,
            meta: m.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamBuilder;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut b = ParamBuilder::<f32>::new(4);
        b.conv("enc0", 1, 4, 3);
        b.linear("fc", 8, 3);
        let store = b.finish();
        let mut ck = Checkpoint::new(serde_json::json!({"epoch": 3}));
        ck.put_store("model.", &store);
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        let back = Checkpoint::read(&bytes[..]).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.take_store("model."), store);
        assert_eq!(back.meta["epoch"], 3);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.tensors.insert("x".into(), Tensor::zeros(vec![4]));
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            Checkpoint::read(&bytes[..]),
            Err(Error::SizeMismatch { .. })
        ));
        assert!(Checkpoint::read(&b"{}"[..]).is_err());
    }
}
