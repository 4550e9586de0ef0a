//! Pretrained weight import.
//!
//! External weights arrive as a tensor bag: the same binary framing as a
//! checkpoint (magic, version, JSON manifest, little-endian f64 payloads)
//! but holding a bare list of named tensors with no training state. A JSON
//! mapping file translates external names to this crate's parameter names;
//! only mapped tensors are imported and each must match the destination
//! shape exactly. Without a mapping, initialization stays random.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};
use swintempo_autograd::Arr;

use crate::checkpoint::{checksum, payload_bytes};
use crate::error::{CoreError, Result};
use crate::model::params::ParamStore;

const MAGIC: &[u8; 8] = b"SWTMTBAG";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct TensorBag {
    pub tensors: IndexMap<String, Arr>,
}

#[derive(Serialize, Deserialize)]
struct BagEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    checksum: String,
}

pub fn write_bag(path: &Path, bag: &TensorBag) -> Result<()> {
    let mut entries = Vec::new();
    let mut payloads = Vec::new();
    for (name, arr) in &bag.tensors {
        let bytes = payload_bytes(arr);
        entries.push(BagEntry {
            name: name.clone(),
            shape: arr.shape().to_vec(),
            dtype: "f64".to_owned(),
            checksum: checksum(&bytes),
        });
        payloads.push(bytes);
    }
    let manifest =
        serde_json::to_vec(&entries).map_err(|e| CoreError::Format(format!("manifest: {e}")))?;
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| CoreError::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(manifest.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&manifest).map_err(io_err)?;
    for bytes in &payloads {
        w.write_all(bytes).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_bag(path: &Path) -> Result<TensorBag> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    if bytes.len() < 20 {
        return Err(CoreError::Format(format!("{}: truncated header", path.display())));
    }
    if &bytes[..8] != MAGIC {
        return Err(CoreError::Format(format!("{}: not a tensor bag", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CoreError::Incompatible(format!(
            "tensor bag version {version}, expected {VERSION}"
        )));
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = 20usize;
    if bytes.len() < body + manifest_len {
        return Err(CoreError::Format(format!("{}: truncated manifest", path.display())));
    }
    let entries: Vec<BagEntry> = serde_json::from_slice(&bytes[body..body + manifest_len])
        .map_err(|e| CoreError::Format(format!("{}: manifest: {e}", path.display())))?;

    let mut offset = body + manifest_len;
    let mut tensors = IndexMap::new();
    for entry in &entries {
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
        tensors.insert(entry.name.clone(), arr);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(CoreError::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - offset
        )));
    }
    Ok(TensorBag { tensors })
}

/// JSON object mapping external tensor names to parameter names.
pub fn load_mapping(path: &Path) -> Result<IndexMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CoreError::Format(format!("{}: mapping: {e}", path.display())))
}

/// Copy mapped tensors into the store; shapes must match exactly. Returns
/// the number of parameters imported.
pub fn import_pretrained(
    store: &mut ParamStore,
    bag: &TensorBag,
    mapping: &IndexMap<String, String>,
) -> Result<usize> {
    let mut targets = HashSet::new();
    for (external, internal) in mapping {
        if !targets.insert(internal.as_str()) {
            return Err(CoreError::Validation(format!(
                "mapping assigns {internal} more than once"
            )));
        }
        let tensor = bag.tensors.get(external).ok_or_else(|| {
            CoreError::Format(format!("tensor bag has no entry named {external}"))
        })?;
        store.set(internal, tensor.clone())?;
    }
    Ok(mapping.len())
}
