//! Binary checkpoint: magic, version, JSON metadata, then named f64 blocks.
//!
//! ```text
//! b"HOPTRACE" | u32 version | u64 metadata length | metadata JSON | blocks...
//! ```
//! All integers and floats are little-endian. Blocks appear in the order
//! listed in the metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Metrics, OptimizerInfo, TrainConfig};
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::graph::RelationGraph;
use crate::reasoner::{Model, ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HOPTRACE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub optimizer: Option<OptimizerInfo>,
    pub num_entities: usize,
    pub num_predicates: usize,
    pub num_texts: usize,
    pub graph_sha256: String,
    pub vocab_sha256: String,
    pub vocab: Vec<String>,
    pub dev: Option<Metrics>,
    /// Resolved run configuration, echoed for reproducibility.
    #[serde(default)]
    pub run: Option<serde_json::Value>,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_model(model: &Model, graph: &RelationGraph) -> Self {
        let blocks = model
            .params
            .tensors()
            .into_iter()
            .map(|(name, t)| BlockInfo {
                name,
                shape: t.shape.clone(),
            })
            .collect();
        Checkpoint {
            meta: CheckpointMeta {
                model: model.config.clone(),
                train: None,
                optimizer: None,
                num_entities: graph.num_entities(),
                num_predicates: graph.num_predicates(),
                num_texts: graph.texts().len(),
                graph_sha256: sha256_hex(graph.to_text().as_bytes()),
                vocab_sha256: sha256_hex(model.vocab.to_lines().as_bytes()),
                vocab: model.vocab.tokens().to_vec(),
                dev: None,
                run: None,
                blocks,
            },
            params: model.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(20 + meta.len() + 8 * self.params.num_parameters());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (_, t) in self.params.tensors() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let meta_end = 20usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated metadata"))?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[20..meta_end])?;

        let mut params = ModelParams::new(
            &meta.model,
            meta.vocab.len(),
            meta.num_entities,
            meta.num_predicates,
            0,
        );
        let mut pos = meta_end;
        {
            let tensors = params.tensors_mut();
            if tensors.len() != meta.blocks.len() {
                return Err(bad("block count does not match the model configuration"));
            }
            for ((name, t), info) in tensors.into_iter().zip(&meta.blocks) {
                if name != info.name || t.shape != info.shape {
                    return Err(Error::Checkpoint(format!(
                        "block {} {:?} does not match expected {name} {:?}",
                        info.name, info.shape, t.shape
                    )));
                }
                let end = pos + 8 * t.data.len();
                if end > bytes.len() {
                    return Err(bad("truncated parameter data"));
                }
                for (v, raw) in t.data.iter_mut().zip(bytes[pos..end].chunks_exact(8)) {
                    *v = f64::from_le_bytes(raw.try_into().unwrap());
                }
                pos = end;
            }
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model for `graph`, which must have the entity, predicate
    /// and relation-text tables the checkpoint was trained on.
    pub fn into_model(self, graph: &RelationGraph) -> Result<Model> {
        let m = &self.meta;
        if m.num_entities != graph.num_entities()
            || m.num_predicates != graph.num_predicates()
            || m.num_texts != graph.texts().len()
            || m.model.form != graph.form()
        {
            return Err(Error::Checkpoint(format!(
                "graph shape ({} entities, {} predicates, {} texts, {}) does not match checkpoint ({}, {}, {}, {})",
                graph.num_entities(),
                graph.num_predicates(),
                graph.texts().len(),
                graph.form(),
                m.num_entities,
                m.num_predicates,
                m.num_texts,
                m.model.form
            )));
        }
        if sha256_hex(graph.to_text().as_bytes()) != m.graph_sha256 {
            log::warn!("graph contents differ from the training graph");
        }
        let vocab = Vocabulary::from_tokens(&self.meta.vocab);
        Ok(Model::from_parts(self.meta.model, vocab, self.params, graph))
    }
}
