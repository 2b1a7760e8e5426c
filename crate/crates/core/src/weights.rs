//! Named real tensors on disk.
//!
//! Layout: `b"MSWB"`, `u32` LE header length, a JSON header
//! `{"version": 1, "tensors": [{"name", "shape", "offset"}]}` and then the
//! f64 LE payload. Offsets are counted in values from the payload start.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSWB";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: Option<u32>,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named parameter tensors, kept in name order so encoding is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightBundle {
    tensors: BTreeMap<String, NamedTensor>,
}

impl WeightBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Bundle(format!(
                "tensor `{name}` shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Bundle(format!(
                "tensor `{name}` has non-finite values"
            )));
        }
        self.tensors
            .insert(name.to_string(), NamedTensor { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.get(name)
    }

    /// Fetch a tensor and check its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Bundle(format!("missing tensor `{name}`")))?;
        if t.shape != shape {
            return Err(Error::Bundle(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(&t.data)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Bundle with the given shapes, every value zero.
    pub fn zeros(spec: &[(&str, Vec<usize>)]) -> Self {
        let mut b = Self::new();
        for (name, shape) in spec {
            let n = shape.iter().product();
            b.insert(name, shape.clone(), vec![0.0; n]).unwrap();
        }
        b
    }

    /// Bundle with Gaussian values of the given standard deviation.
    pub fn random(spec: &[(&str, Vec<usize>)], std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("std must be finite and >= 0");
        let mut b = Self::new();
        for (name, shape) in spec {
            let n = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
            b.insert(name, shape.clone(), data).unwrap();
        }
        b
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.data.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            version: Some(BUNDLE_VERSION),
            tensors: entries,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 8 || &buf[..4] != MAGIC {
            return Err(Error::Bundle("not a weight bundle (bad magic)".into()));
        }
        let hlen = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let body = &buf[8..];
        if body.len() < hlen {
            return Err(Error::Bundle("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Bundle(format!("bad header: {e}")))?;
        match header.version {
            None => return Err(Error::Bundle("header has no version field".into())),
            Some(BUNDLE_VERSION) => {}
            Some(v) => return Err(Error::Bundle(format!("unsupported bundle version {v}"))),
        }
        let payload = &body[hlen..];
        if !payload.len().is_multiple_of(8) {
            return Err(Error::Bundle(
                "payload is not a whole number of f64 values".into(),
            ));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut b = Self::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset.checked_add(n).filter(|&end| end <= values.len());
            let Some(end) = end else {
                return Err(Error::Bundle(format!(
                    "tensor `{}` runs past the end of the payload",
                    e.name
                )));
            };
            b.insert(&e.name, e.shape, values[e.offset..end].to_vec())?;
        }
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Copy every tensor of `other` into `self`, replacing same-named ones.
    pub fn merge(&mut self, other: WeightBundle) {
        self.tensors.extend(other.tensors);
    }
}
