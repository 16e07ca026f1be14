//! Binary checkpoint format.
//!
//! ```text
//! b"CMCN" | version: u32 LE | meta_len: u32 LE | meta: UTF-8 JSON | f64 LE values...
//! ```
//!
//! The JSON holds both network configs, the step counter and the ordered
//! tensor table (`name`, `shape`); raw values follow in table order.

use std::fs;
use std::path::Path;

use cmrlab_autodiff::{Parameter, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{DiscriminatorConfig, GeneratorConfig};
use crate::model::{discriminator_layout, generator_layout, Discriminator, Generator};
use crate::CmcnError;

pub const MAGIC: &[u8; 4] = b"CMCN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Shape,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    step: u64,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> CmcnError {
    CmcnError::Checkpoint(msg.into())
}

impl Checkpoint {
    fn all_params(&self) -> impl Iterator<Item = &Parameter> {
        self.generator.params().iter().chain(self.discriminator.params())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            generator: *self.generator.config(),
            discriminator: *self.discriminator.config(),
            step: self.step,
            tensors: self
                .all_params()
                .map(|p| TensorEntry {
                    name: p.name().to_string(),
                    shape: p.value().shape(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&meta).expect("checkpoint metadata serializes");
        let values: usize = self.all_params().map(|p| p.value().numel()).sum();
        let mut out = Vec::with_capacity(12 + json.len() + 8 * values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.all_params() {
            for v in p.value().data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CmcnError> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing CMCN magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CmcnError::UnsupportedVersion(version));
        }
        let meta_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = 12usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("metadata length runs past end of file"))?;
        let text = std::str::from_utf8(&bytes[12..body]).map_err(|e| bad(format!("metadata is not UTF-8: {e}")))?;
        let meta: Meta = serde_json::from_str(text).map_err(|e| bad(format!("metadata: {e}")))?;

        let g_layout = generator_layout(&meta.generator);
        let d_layout = discriminator_layout(&meta.discriminator);
        if meta.tensors.len() != g_layout.len() + d_layout.len() {
            return Err(bad(format!(
                "tensor table has {} entries, configs imply {}",
                meta.tensors.len(),
                g_layout.len() + d_layout.len()
            )));
        }
        for (entry, slot) in meta.tensors.iter().zip(g_layout.iter().chain(&d_layout)) {
            if entry.name != slot.name || entry.shape != slot.shape {
                return Err(bad(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name, entry.shape, slot.name, slot.shape
                )));
            }
        }
        let mut pos = body;
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for entry in &meta.tensors {
            let n: usize = entry.shape.iter().product();
            let end = pos + 8 * n;
            if end > bytes.len() {
                return Err(bad(format!("truncated values for {}", entry.name)));
            }
            let data = bytes[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor::new(entry.shape, data).expect("shape from table"));
            pos = end;
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        let d_tensors = tensors.split_off(g_layout.len());
        Ok(Self {
            generator: Generator::from_tensors(meta.generator, tensors)?,
            discriminator: Discriminator::from_tensors(meta.discriminator, d_tensors)?,
            step: meta.step,
        })
    }

    /// Writes atomically (temp file then rename).
    pub fn save(&self, path: &Path) -> Result<(), CmcnError> {
        cmrlab_core::write_atomic(path, &self.to_bytes()).map_err(|source| CmcnError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CmcnError> {
        let bytes = fs::read(path).map_err(|source| CmcnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
