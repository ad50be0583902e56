//! Binary checkpoints: `LAVAE` magic, u32 version, u64 manifest length,
//! JSON manifest, then every tensor as packed little-endian f32.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cvae, CvaeMode, DecoderParams, Lavae, TensorSet};
use crate::scalar::Scalar;
use crate::tensor::ModelConfig;

pub const MAGIC: &[u8; 5] = b"LAVAE";
pub const VERSION: u32 = 1;
const HEADER: usize = 5 + 4 + 8;

/// Which parameter container a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lavae,
    CvaeTrad,
    CvaeAuginv,
}

impl ModelKind {
    pub fn of_cvae(mode: CvaeMode) -> Self {
        match mode {
            CvaeMode::Traditional => ModelKind::CvaeTrad,
            CvaeMode::AugInvariant => ModelKind::CvaeAuginv,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub stage: String,
    pub epoch: usize,
    pub seed: u64,
    pub pair: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub meta: TrainingMeta,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    /// Offsets must tile `[0, payload_len)` in order with no gaps or overlaps.
    fn check_partition(&self, payload_len: usize) -> Result<()> {
        let mut expected = 0;
        for t in &self.tensors {
            if t.offset != expected {
                return Err(Error::CorruptManifest(format!(
                    "tensor `{}` at offset {} but previous tensor ends at {expected}",
                    t.name, t.offset
                )));
            }
            expected += 4 * t.shape.iter().product::<usize>();
        }
        if payload_len < expected {
            return Err(Error::ShortPayload {
                needed: expected,
                available: payload_len,
            });
        }
        if payload_len > expected {
            return Err(Error::CorruptManifest(format!(
                "{} trailing payload bytes",
                payload_len - expected
            )));
        }
        Ok(())
    }
}

/// A decoded checkpoint file: manifest plus tensors in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn from_params<S: Scalar, P: TensorSet<S>>(kind: ModelKind, config: ModelConfig, meta: TrainingMeta, params: &P) -> Self {
        let mut entries = Vec::new();
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, t) in params.tensors() {
            entries.push(TensorEntry {
                name,
                shape: t.shape.clone(),
                offset,
            });
            offset += 4 * t.len();
            tensors.push(t.data.iter().map(|v| v.as_f32()).collect());
        }
        Checkpoint {
            manifest: Manifest {
                kind,
                config,
                meta,
                tensors: entries,
            },
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let payload: usize = self.tensors.iter().map(|t| 4 * t.len()).sum();
        let mut out = Vec::with_capacity(HEADER + manifest.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER {
            return Err(Error::ShortPayload {
                needed: HEADER,
                available: bytes.len(),
            });
        }
        if &bytes[..5] != MAGIC {
            return Err(Error::CorruptManifest("missing LAVAE magic".into()));
        }
        let version = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let len = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes")) as usize;
        let body = &bytes[HEADER..];
        if body.len() < len {
            return Err(Error::ShortPayload {
                needed: HEADER + len,
                available: bytes.len(),
            });
        }
        let manifest: Manifest =
            serde_json::from_slice(&body[..len]).map_err(|e| Error::CorruptManifest(e.to_string()))?;
        let payload = &body[len..];
        manifest.check_partition(payload.len())?;
        let tensors = manifest
            .tensors
            .iter()
            .map(|t| {
                let n: usize = t.shape.iter().product();
                payload[t.offset..t.offset + 4 * n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect()
            })
            .collect();
        Ok(Checkpoint { manifest, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn by_name(&self) -> BTreeMap<&str, (&TensorEntry, &Vec<f32>)> {
        self.manifest
            .tensors
            .iter()
            .zip(&self.tensors)
            .map(|(e, t)| (e.name.as_str(), (e, t)))
            .collect()
    }

    /// Copies stored tensors into `params`, which must have exactly the
    /// same names and shapes.
    fn fill<S: Scalar, P: TensorSet<S>>(&self, params: &mut P) -> Result<()> {
        let stored = self.by_name();
        let mut targets = params.tensors_mut();
        if targets.len() != stored.len() {
            return Err(Error::CorruptManifest(format!(
                "expected {} tensors, checkpoint has {}",
                targets.len(),
                stored.len()
            )));
        }
        for (name, t) in targets.iter_mut() {
            let (entry, data) = stored
                .get(name.as_str())
                .ok_or_else(|| Error::CorruptManifest(format!("missing tensor `{name}`")))?;
            if entry.shape != t.shape {
                return Err(Error::CorruptManifest(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    entry.shape, t.shape
                )));
            }
            t.data = data.iter().map(|&v| S::lit(v as f64)).collect();
        }
        Ok(())
    }

    fn expect_kind(&self, kinds: &[ModelKind]) -> Result<()> {
        if kinds.contains(&self.manifest.kind) {
            Ok(())
        } else {
            Err(Error::CorruptManifest(format!("checkpoint holds {:?}", self.manifest.kind)))
        }
    }

    /// Rebuilds a LAVAE model; transfer heads are recovered from `head.<label>.*` names.
    pub fn to_lavae<S: Scalar>(&self) -> Result<Lavae<S>> {
        self.expect_kind(&[ModelKind::Lavae])?;
        let config = self.manifest.config;
        config.validate()?;
        let mut model = Lavae::<S>::init(config, 0);
        let template = DecoderParams::<S>::init(config, 0, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0));
        let suffixes: Vec<String> = template.tensors().into_iter().map(|(n, _)| n).collect();
        for entry in &self.manifest.tensors {
            if let Some(rest) = entry.name.strip_prefix("head.") {
                let label = suffixes
                    .iter()
                    .find_map(|s| rest.strip_suffix(s.as_str()).and_then(|l| l.strip_suffix('.')))
                    .ok_or_else(|| Error::CorruptManifest(format!("unrecognised head tensor `{}`", entry.name)))?;
                model.heads.entry(label.to_string()).or_insert_with(|| template.zeros_like());
            }
        }
        self.fill(&mut model)?;
        Ok(model)
    }

    pub fn to_cvae<S: Scalar>(&self) -> Result<Cvae<S>> {
        let mode = match self.manifest.kind {
            ModelKind::CvaeTrad => CvaeMode::Traditional,
            ModelKind::CvaeAuginv => CvaeMode::AugInvariant,
            ModelKind::Lavae => return Err(Error::CorruptManifest("checkpoint holds a LAVAE model, not a CVAE".into())),
        };
        let config = self.manifest.config;
        config.validate()?;
        let mut model = Cvae::<S>::init(config, mode, 0);
        self.fill(&mut model)?;
        Ok(model)
    }
}

pub fn save_lavae<S: Scalar>(model: &Lavae<S>, meta: TrainingMeta, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_params(ModelKind::Lavae, model.config, meta, model).save(path)
}

pub fn load_lavae<S: Scalar>(path: impl AsRef<Path>) -> Result<Lavae<S>> {
    Checkpoint::load(path)?.to_lavae()
}

pub fn save_cvae<S: Scalar>(model: &Cvae<S>, meta: TrainingMeta, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_params(ModelKind::of_cvae(model.mode), model.config, meta, model).save(path)
}

pub fn load_cvae<S: Scalar>(path: impl AsRef<Path>) -> Result<Cvae<S>> {
    Checkpoint::load(path)?.to_cvae()
}
