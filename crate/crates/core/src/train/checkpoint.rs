//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.json   config snapshot, phase, step, RNG state, tensor index
//! <dir>/params.bin      backbone tensors (dump format, concatenated)
//! <dir>/heads.bin       task-head tensors
//! <dir>/optimizer.bin   Adam moments: m then v for every parameter, store order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::is_backbone_param;
use crate::params::ParamStore;
use crate::tensor::{RngState, Tensor};
use crate::train::optim::AdamState;

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS_BLOB: &str = "params.bin";
pub const HEADS_BLOB: &str = "heads.bin";
pub const OPTIMIZER_BLOB: &str = "optimizer.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub offset: usize,
    pub bytes: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub phase: String,
    pub step: u64,
    pub rng: RngState,
    pub config: Map<String, Value>,
    pub tensors: Vec<TensorRecord>,
    /// Number of optimizer updates, present when moments were saved.
    pub optimizer_t: Option<u64>,
}

/// Everything needed to resume training or to seed a later phase.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// `"pretrain"` or `"finetune"`.
    pub phase: String,
    pub step: u64,
    pub rng: RngState,
    pub store: ParamStore,
    pub optim: Option<AdamState>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blobs: [(String, Vec<u8>); 2] = [(PARAMS_BLOB.into(), Vec::new()), (HEADS_BLOB.into(), Vec::new())];
        let mut tensors = Vec::with_capacity(self.store.len());
        for entry in self.store.entries() {
            let (file, blob) = &mut blobs[usize::from(!is_backbone_param(&entry.name))];
            let bytes = entry.value.to_dump_bytes();
            tensors.push(TensorRecord {
                name: entry.name.clone(),
                shape: entry.value.shape().to_vec(),
                file: file.clone(),
                offset: blob.len(),
                bytes: bytes.len(),
                trainable: entry.trainable,
            });
            blob.extend_from_slice(&bytes);
        }
        for (file, blob) in &blobs {
            let path = dir.join(file);
            fs::write(&path, blob).map_err(|e| Error::io(path, e))?;
        }
        if let Some(opt) = &self.optim {
            let mut blob = Vec::new();
            for t in opt.m.iter().zip(&opt.v).flat_map(|(m, v)| [m, v]) {
                blob.extend_from_slice(&t.to_dump_bytes());
            }
            let path = dir.join(OPTIMIZER_BLOB);
            fs::write(&path, blob).map_err(|e| Error::io(path, e))?;
        }
        let manifest = Manifest {
            format: FORMAT_VERSION,
            phase: self.phase.clone(),
            step: self.step,
            rng: self.rng.clone(),
            config: self.config.to_map(),
            tensors,
            optimizer_t: self.optim.as_ref().map(|o| o.t),
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            offset: byte_offset(&text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        if manifest.format != FORMAT_VERSION {
            return Err(Error::Validation(format!("{}: unsupported checkpoint format {}", path.display(), manifest.format)));
        }
        let mut config = RunConfig::default();
        config.apply_map(&manifest.config)?;

        let mut store = ParamStore::new();
        let mut cache: Vec<(String, Vec<u8>)> = Vec::new();
        for rec in &manifest.tensors {
            if !cache.iter().any(|(f, _)| f == &rec.file) {
                let p = dir.join(&rec.file);
                cache.push((rec.file.clone(), fs::read(&p).map_err(|e| Error::io(p, e))?));
            }
            let blob = &cache.iter().find(|(f, _)| f == &rec.file).expect("cached").1;
            let bytes = blob.get(rec.offset..rec.offset + rec.bytes).ok_or_else(|| {
                Error::Validation(format!("tensor `{}` lies outside {} ({} bytes)", rec.name, rec.file, blob.len()))
            })?;
            let value = Tensor::from_dump_bytes(bytes)?;
            if value.shape() != rec.shape.as_slice() {
                return Err(Error::Validation(format!(
                    "tensor `{}`: manifest shape {:?}, stored shape {:?}",
                    rec.name,
                    rec.shape,
                    value.shape()
                )));
            }
            let id = store.add(rec.name.clone(), value);
            store.set_trainable(id, rec.trainable);
        }

        let optim = match manifest.optimizer_t {
            None => None,
            Some(t) => {
                let p = dir.join(OPTIMIZER_BLOB);
                let blob = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                let mut cursor = blob.as_slice();
                let mut state = AdamState { t, m: Vec::new(), v: Vec::new() };
                for entry in store.entries() {
                    for dst in [&mut state.m, &mut state.v] {
                        let moment = Tensor::read_dump(&mut cursor)?;
                        if moment.shape() != entry.value.shape() {
                            return Err(Error::Validation(format!("optimizer moment for `{}` has the wrong shape", entry.name)));
                        }
                        dst.push(moment);
                    }
                }
                Some(state)
            }
        };
        Ok(Checkpoint { config, phase: manifest.phase, step: manifest.step, rng: manifest.rng, store, optim })
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum::<usize>() + column.saturating_sub(1)
}

/// Model keys that can change between phases without touching any tensor.
const SHAPE_NEUTRAL_KEYS: [&str; 2] = ["model.dropout", "model.zero_visual_values"];

/// Model-shape keys whose values differ between a checkpoint and the current
/// config, as `key: checkpoint -> config` lines.
pub fn model_config_diff(saved: &RunConfig, current: &RunConfig) -> Vec<String> {
    let (a, b) = (saved.to_map(), current.to_map());
    a.iter()
        .filter(|(k, _)| k.starts_with("model.") && !SHAPE_NEUTRAL_KEYS.contains(&k.as_str()))
        .filter_map(|(k, v)| {
            let w = &b[k];
            (v != w).then(|| format!("{k}: checkpoint {v} vs config {w}"))
        })
        .collect()
}

/// Error out when the checkpoint was built with different model dimensions.
pub fn ensure_compatible(saved: &RunConfig, current: &RunConfig) -> Result<()> {
    let diff = model_config_diff(saved, current);
    if diff.is_empty() {
        Ok(())
    } else {
        Err(Error::Incompatible(diff.join("; ")))
    }
}
