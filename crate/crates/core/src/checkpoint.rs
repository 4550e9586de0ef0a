//! Binary checkpoint container.
//!
//! Layout: an 8-byte magic, a little-endian u32 format version, a
//! little-endian u64 manifest length, a JSON manifest, then the tensor
//! payloads concatenated in manifest order as little-endian f64 words.
//! The manifest records the model configuration, the epoch of the saved
//! parameters, the training RNG state, and one entry per tensor with its
//! role (parameter or Adam moment) and a SHA-256 checksum of its payload.

use std::io::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use swintempo_autograd::Arr;

use crate::error::{CoreError, Result};
use crate::model::params::ParamStore;
use crate::model::ModelConfig;
use crate::training::adam::AdamState;

const MAGIC: &[u8; 8] = b"SWTMCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

pub struct Checkpoint {
    pub model: ModelConfig,
    pub epoch: u64,
    pub rng: RngState,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    /// A checkpoint only loads into the exact configuration it was saved
    /// from; any difference in variant or dimensions is refused.
    pub fn compatible_with(&self, cfg: &ModelConfig) -> Result<()> {
        if &self.model != cfg {
            return Err(CoreError::Incompatible(format!(
                "checkpoint was saved for variant {} with different dimensions",
                self.model.variant
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    epoch: u64,
    rng: RngManifest,
    adam_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct RngManifest {
    seed_hex: String,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    role: Role,
    checksum: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    AdamM,
    AdamV,
}

pub(crate) fn payload_bytes(arr: &Arr) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(arr.len() * 8);
    for &v in arr.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub(crate) fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut entries = Vec::new();
    let mut payloads: Vec<Vec<u8>> = Vec::new();
    let push = |name: &str, arr: &Arr, role: Role, entries: &mut Vec<TensorEntry>, payloads: &mut Vec<Vec<u8>>| {
        let bytes = payload_bytes(arr);
        entries.push(TensorEntry {
            name: name.to_owned(),
            shape: arr.shape().to_vec(),
            dtype: "f64".to_owned(),
            role,
            checksum: checksum(&bytes),
        });
        payloads.push(bytes);
    };
    for (name, arr) in ckpt.params.iter() {
        push(name, arr, Role::Param, &mut entries, &mut payloads);
    }
    if let Some(adam) = &ckpt.adam {
        for (name, arr) in &adam.m {
            push(name, arr, Role::AdamM, &mut entries, &mut payloads);
        }
        for (name, arr) in &adam.v {
            push(name, arr, Role::AdamV, &mut entries, &mut payloads);
        }
    }
    let manifest = Manifest {
        model: ckpt.model.clone(),
        epoch: ckpt.epoch,
        rng: RngManifest {
            seed_hex: hex::encode(ckpt.rng.seed),
            word_pos: ckpt.rng.word_pos.to_string(),
        },
        adam_step: ckpt.adam.as_ref().map(|a| a.t),
        tensors: entries,
    };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| CoreError::Format(format!("manifest: {e}")))?;

    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| CoreError::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(manifest_json.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&manifest_json).map_err(io_err)?;
    for bytes in &payloads {
        w.write_all(bytes).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    if bytes.len() < 20 {
        return Err(CoreError::Format(format!("{}: truncated header", path.display())));
    }
    if &bytes[..8] != MAGIC {
        return Err(CoreError::Format(format!("{}: not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CoreError::Incompatible(format!(
            "checkpoint format version {version}, expected {VERSION}"
        )));
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = 20usize;
    if bytes.len() < body + manifest_len {
        return Err(CoreError::Format(format!("{}: truncated manifest", path.display())));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[body..body + manifest_len])
        .map_err(|e| CoreError::Format(format!("{}: manifest: {e}", path.display())))?;

    let seed_vec = hex::decode(&manifest.rng.seed_hex)
        .map_err(|e| CoreError::Format(format!("rng seed: {e}")))?;
    let seed: [u8; 32] = seed_vec
        .try_into()
        .map_err(|_| CoreError::Format("rng seed is not 32 bytes".into()))?;
    let word_pos: u128 = manifest
        .rng
        .word_pos
        .parse()
        .map_err(|e| CoreError::Format(format!("rng word_pos: {e}")))?;

    let mut offset = body + manifest_len;
    let mut params = IndexMap::new();
    let mut adam_m = IndexMap::new();
    let mut adam_v = IndexMap::new();
    for entry in &manifest.tensors {
        if entry.dtype != "f64" {
            return Err(CoreError::Incompatible(format!(
                "tensor {} has dtype {}, expected f64",
                entry.name, entry.dtype
            )));
        }
        let len: usize = entry.shape.iter().product();
        let end = offset + len * 8;
        if bytes.len() < end {
            return Err(CoreError::Format(format!(
                "{}: truncated payload for {}",
                path.display(),
                entry.name
            )));
        }
        let payload = &bytes[offset..end];
        let actual = checksum(payload);
        if actual != entry.checksum {
            return Err(CoreError::Checksum(format!(
                "tensor {} expected {} got {}",
                entry.name, entry.checksum, actual
            )));
        }
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let arr = Arr::from_shape_vec(IxDyn(&entry.shape), data)
            .map_err(|e| CoreError::Format(format!("tensor {}: {e}", entry.name)))?;
        match entry.role {
            Role::Param => params.insert(entry.name.clone(), arr),
            Role::AdamM => adam_m.insert(entry.name.clone(), arr),
            Role::AdamV => adam_v.insert(entry.name.clone(), arr),
        };
        offset = end;
    }
    if offset != bytes.len() {
        return Err(CoreError::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - offset
        )));
    }

    let adam = match manifest.adam_step {
        Some(t) => Some(AdamState { t, m: adam_m, v: adam_v }),
        None => {
            if !adam_m.is_empty() || !adam_v.is_empty() {
                return Err(CoreError::Format(
                    "optimizer tensors present without adam_step".into(),
                ));
            }
            None
        }
    };

    Ok(Checkpoint {
        model: manifest.model,
        epoch: manifest.epoch,
        rng: RngState { seed, word_pos },
        params: ParamStore::from_tensors(params),
        adam,
    })
}
