//! `RTVC1` tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic     5 bytes  "RTVC1"
//! version   u32
//! count     u32
//! count x { name_len u16, name utf-8, ndim u8, dims u32 x ndim, data f32 x prod(dims) }
//! ```

use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::ModelGraph;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"RTVC1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Structural(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }
}

/// Named tensors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub version: u32,
    pub tensors: IndexMap<String, Tensor>,
}

impl Default for WeightBundle {
    fn default() -> Self {
        Self { version: VERSION, tensors: IndexMap::new() }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Length(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl WeightBundle {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Merge another bundle's tensors into this one.
    pub fn extend(&mut self, other: WeightBundle) {
        self.tensors.extend(other.tensors);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = IndexMap::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|e| Error::Format(format!("tensor name is not utf-8: {e}")))?
                .to_owned();
            let ndim = r.u8("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dims")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Length(format!("tensor {name} is too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Length(name.clone()))?, "data")?;
            let data: Vec<f32> =
                raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("tensor {name} has a non-finite value at {i}")));
            }
            if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Length(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { version, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Check that every tensor the graph reads exists with the right shape.
    pub fn validate_for(&self, graph: &ModelGraph) -> Result<()> {
        graph.validate()?;
        for (name, shape) in graph.tensor_specs() {
            match self.tensors.get(&name) {
                None => return Err(Error::Structural(format!("missing tensor {name}"))),
                Some(t) if t.shape != shape => {
                    return Err(Error::Structural(format!(
                        "tensor {name} has shape {:?}, graph needs {shape:?}",
                        t.shape
                    )))
                }
                Some(t) if t.data.iter().any(|v| !v.is_finite()) => {
                    return Err(Error::Validation(format!("tensor {name} is not finite")))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Parameters for synthetic weight initialisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub seed: u64,
    /// Half-width of the uniform bias distribution; 0 gives zero biases.
    pub bias_scale: f32,
    /// Multiplier on the fan-in uniform bound `sqrt(3 / fan_in)`.
    pub weight_gain: f32,
}

impl InitConfig {
    pub fn new(seed: u64) -> Self {
        Self { seed, bias_scale: 0.1, weight_gain: 1.0 }
    }

    pub fn zero_bias(seed: u64) -> Self {
        Self { seed, bias_scale: 0.0, weight_gain: 1.0 }
    }
}

/// Deterministic random weights for every tensor of `graph`.
pub fn random_init(graph: &ModelGraph, seed: u64) -> WeightBundle {
    random_init_with(graph, InitConfig::new(seed))
}

pub fn random_init_with(graph: &ModelGraph, cfg: InitConfig) -> WeightBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bundle = WeightBundle::default();
    for (name, shape) in graph.tensor_specs() {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if shape.len() == 1 {
            if cfg.bias_scale > 0.0 {
                (0..n).map(|_| rng.random_range(-cfg.bias_scale..cfg.bias_scale)).collect()
            } else {
                vec![0.0; n]
            }
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let bound = cfg.weight_gain * (3.0 / fan_in as f32).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        bundle.insert(name, Tensor { shape, data });
    }
    bundle
}
