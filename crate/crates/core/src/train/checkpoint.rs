//! Binary checkpoint: magic, version, JSON metadata (spec, spec hash and
//! free-form extras), named little-endian f32 tensors and a trailing
//! SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{LossConfig, TrainConfig};
use super::optim::{Optimizer, OptimizerSettings};
use super::trainer::{History, TrainState};
use crate::arch::{ArchSpec, Model};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DUNETCKP";
const VERSION: u32 = 1;
const FIRST_MOMENT: &str = "opt.m.";
const SECOND_MOMENT: &str = "opt.v.";

type Named = (String, Vec<usize>, Vec<f32>);

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Meta {
    spec: ArchSpec,
    spec_hash: String,
    #[serde(default)]
    extra: Option<TrainMeta>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainMeta {
    config: TrainConfig,
    loss: LossConfig,
    optimizer: OptimizerSettings,
    step: u64,
    history: History,
}

fn encode(meta: &Meta, tensors: &[Named]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint("truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::CorruptCheckpoint("length overflow".into()))
    }
}

fn decode(bytes: &[u8]) -> Result<(Meta, Vec<Named>)> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.into());
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint file or truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified)"));
    }
    let mut r = Reader { bytes: body, at: 8 };
    if r.u32()? != VERSION as usize {
        return Err(corrupt("unsupported version"));
    }
    let meta_len = r.u64()?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| corrupt("tensor name"))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt("tensor size overflow"))?;
        let data = r
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, shape, data));
    }
    if r.at != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok((meta, tensors))
}

fn model_tensors(model: &Model) -> Vec<Named> {
    model
        .params()
        .iter()
        .map(|(_, p)| (p.name.clone(), p.shape.clone(), p.data.clone()))
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<(Meta, Vec<Named>)> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn rebuild(meta: &Meta, tensors: Vec<Named>) -> Result<Model> {
    if meta.spec.content_hash() != meta.spec_hash {
        return Err(Error::CorruptCheckpoint("spec hash does not match the stored spec".into()));
    }
    let mut model = Model::build(&meta.spec)?;
    model.params_mut().load_values(tensors)?;
    Ok(model)
}

fn split_optimizer(tensors: Vec<Named>) -> (Vec<Named>, Vec<Named>) {
    tensors.into_iter().partition(|(n, _, _)| !n.starts_with("opt."))
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let meta = Meta {
        spec: model.spec().clone(),
        spec_hash: model.spec().content_hash(),
        extra: None,
    };
    write(path, &encode(&meta, &model_tensors(model))?)
}

/// Loads the weights of any checkpoint, including a training state.
pub fn load_model(path: &Path) -> Result<Model> {
    let (meta, tensors) = read(path)?;
    rebuild(&meta, split_optimizer(tensors).0)
}

/// Like `load_model`, but rejects a checkpoint built for another spec.
pub fn load_model_expecting(path: &Path, spec: &ArchSpec) -> Result<Model> {
    let (meta, tensors) = read(path)?;
    let expected = spec.content_hash();
    if meta.spec_hash != expected {
        return Err(Error::SpecMismatch {
            expected: format!("{} ({})", spec.label(), &expected[..12]),
            found: format!("{} ({})", meta.spec.label(), &meta.spec_hash[..meta.spec_hash.len().min(12)]),
        });
    }
    rebuild(&meta, split_optimizer(tensors).0)
}

pub fn save_state(path: &Path, state: &TrainState) -> Result<()> {
    let spec = state.model.spec();
    let meta = Meta {
        spec: spec.clone(),
        spec_hash: spec.content_hash(),
        extra: Some(TrainMeta {
            config: state.config.clone(),
            loss: state.loss,
            optimizer: state.optimizer.settings,
            step: state.optimizer.step,
            history: state.history.clone(),
        }),
    };
    let mut tensors = model_tensors(&state.model);
    for (name, s) in &state.optimizer.slots {
        tensors.push((format!("{FIRST_MOMENT}{name}"), vec![s.first.len()], s.first.clone()));
        if !s.second.is_empty() {
            tensors.push((format!("{SECOND_MOMENT}{name}"), vec![s.second.len()], s.second.clone()));
        }
    }
    write(path, &encode(&meta, &tensors)?)
}

pub fn load_state(path: &Path) -> Result<TrainState> {
    let (meta, tensors) = read(path)?;
    let extra = meta
        .extra
        .clone()
        .ok_or_else(|| Error::CorruptCheckpoint("weights-only checkpoint has no training state".into()))?;
    let (weights, opt) = split_optimizer(tensors);
    let model = rebuild(&meta, weights)?;
    let mut optimizer = Optimizer::new(extra.optimizer);
    optimizer.step = extra.step;
    for (name, _, data) in opt {
        if let Some(p) = name.strip_prefix(FIRST_MOMENT) {
            optimizer.slots.entry(p.to_string()).or_default().first = data;
        } else if let Some(p) = name.strip_prefix(SECOND_MOMENT) {
            optimizer.slots.entry(p.to_string()).or_default().second = data;
        } else {
            return Err(Error::CorruptCheckpoint(format!("unknown tensor {name}")));
        }
    }
    Ok(TrainState {
        model,
        optimizer,
        history: extra.history,
        config: extra.config,
        loss: extra.loss,
    })
}
