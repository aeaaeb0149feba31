use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{vocab_sizes, SplitSpec};
use crate::model::{Model, ModelConfig, ModelError, VocabSizes};
use crate::numeric::{ParamSet, Scalar, Tensor};
use crate::vocab::{BpeModel, VocabKind, VocabSet, Vocabulary};

pub const MAGIC: &[u8; 4] = b"TFGM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("format error: {0}")]
    Format(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What training recorded about the run that produced a checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Epoch the parameters come from; 0 is the initialisation.
    pub epoch: usize,
    pub valid_loss: Option<f64>,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs_run: usize,
    /// Present when the data directory was split by seed.
    pub split: Option<SplitSpec>,
    /// Training label counts per type.
    pub type_counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub sizes: VocabSizes,
    pub vocab: VocabSet,
    pub meta: TrainingMeta,
    pub params: ParamSet<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    sizes: VocabSizes,
    vocab: VocabJson,
    meta: TrainingMeta,
    tensors: Vec<(String, Vec<usize>)>,
}

#[derive(Serialize, Deserialize)]
struct VocabJson {
    names: Vec<String>,
    segments: Vec<String>,
    node_features: Vec<String>,
    edge_features: Vec<String>,
    types: Vec<String>,
    bpe: BpeModel,
    bpe_symbols: Vec<String>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>, vocab: VocabSet, meta: TrainingMeta) -> Checkpoint {
        Checkpoint {
            config: model.config.clone(),
            sizes: model.sizes,
            vocab,
            meta,
            params: model.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn model<T: Scalar>(&self) -> Result<Model<T>, ModelError> {
        let params = self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
        Model::from_params(self.config.clone(), self.sizes, params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let v = &self.vocab;
        let header = Header {
            config: self.config.clone(),
            sizes: self.sizes,
            vocab: VocabJson {
                names: v.names.entries().to_vec(),
                segments: v.segments.entries().to_vec(),
                node_features: v.node_features.entries().to_vec(),
                edge_features: v.edge_features.entries().to_vec(),
                types: v.types.entries().to_vec(),
                bpe: v.bpe.clone(),
                bpe_symbols: v.bpe.symbols.clone(),
            },
            meta: self.meta.clone(),
            tensors: self.params.iter().map(|(k, t)| (k.clone(), t.shape().to_vec())).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.values() {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let fmt = |m: &str| CheckpointError::Format(m.to_string());
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(fmt("missing TFGM magic"));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        if bytes.len() < 4 {
            return Err(fmt("truncated"));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let json_len = r.u64()? as usize;
        let json = r.take(json_len)?;
        let header: Header = serde_json::from_slice(json).map_err(|e| {
            if crc32fast::hash(body) != stored {
                CheckpointError::Integrity("checksum mismatch".into())
            } else {
                CheckpointError::Format(format!("metadata: {e}"))
            }
        })?;
        let mut params = ParamSet::new();
        for (name, shape) in &header.tensors {
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            if &dims != shape {
                return Err(CheckpointError::Integrity(format!("{name}: shape header {dims:?}, metadata {shape:?}")));
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| fmt("tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(dims, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
            params.insert(name.clone(), t);
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Integrity(format!("{} trailing bytes", body.len().saturating_sub(r.pos))));
        }
        if crc32fast::hash(body) != stored {
            return Err(CheckpointError::Integrity("checksum mismatch".into()));
        }
        let vj = header.vocab;
        let voc = |kind, e| Vocabulary::from_entries(kind, e).map_err(|e| CheckpointError::Format(e.to_string()));
        let vocab = VocabSet {
            names: voc(VocabKind::Name, vj.names)?,
            segments: voc(VocabKind::Segment, vj.segments)?,
            node_features: voc(VocabKind::NodeFeature, vj.node_features)?,
            edge_features: voc(VocabKind::EdgeFeature, vj.edge_features)?,
            types: voc(VocabKind::Type, vj.types)?,
            bpe: BpeModel { symbols: vj.bpe_symbols, ..vj.bpe },
        };
        if vocab_sizes(&vocab) != header.sizes || vocab.types.len() != header.config.type_count {
            return Err(CheckpointError::Integrity("vocabulary sizes disagree with the model".into()));
        }
        let ck = Checkpoint { config: header.config, sizes: header.sizes, vocab, meta: header.meta, params };
        ck.model::<f32>().map_err(|e| CheckpointError::Integrity(e.to_string()))?;
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        // The last four bytes are the checksum.
        let end = self.pos.checked_add(n).filter(|&e| e + 4 <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Format("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
