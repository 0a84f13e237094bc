//! Model container: a compact JSON header (format version, config, tensor
//! directory) on the first line, followed by a little-endian 32-bit-float
//! weight blob whose 64-bit checksum is recorded in the header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{checksum_hex, fnv1a64};
use crate::lifter::{LifterConfig, LifterModel, Tensors};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Offset into the blob, in f32 elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    config: LifterConfig,
    tensors: Vec<TensorEntry>,
    blob_checksum: String,
}

pub fn save_model(model: &LifterModel, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, mat) in model.tensors.named() {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: [mat.rows, mat.cols],
            offset,
        });
        for &v in &mat.data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += mat.len();
    }
    let header = ModelHeader {
        format_version: MODEL_FORMAT_VERSION,
        config: model.config.clone(),
        tensors: entries,
        blob_checksum: checksum_hex(&blob),
    };
    let mut bytes =
        serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&blob);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<LifterModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header line"))?;
    let header: ModelHeader = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::format(path, e.to_string()))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let blob = &bytes[split + 1..];
    if checksum_hex(blob) != header.blob_checksum {
        return Err(Error::format(
            path,
            format!(
                "weight blob checksum mismatch: {:016x} declared {}",
                fnv1a64(blob),
                header.blob_checksum
            ),
        ));
    }

    // Rebuild the tensor structure from the config, then fill by name.
    let mut model = LifterModel::init(header.config.clone())?;
    zero(&mut model.tensors);
    let mut expected: Vec<&'static str> =
        model.tensors.named().iter().map(|(n, _)| *n).collect();
    for entry in &header.tensors {
        let mut found = false;
        for (name, mat) in model.tensors.named_mut() {
            if name == entry.name {
                if [mat.rows, mat.cols] != entry.shape {
                    return Err(Error::format(
                        path,
                        format!(
                            "tensor '{}' has shape {:?}, expected {:?}",
                            entry.name,
                            entry.shape,
                            [mat.rows, mat.cols]
                        ),
                    ));
                }
                let start = entry.offset * 4;
                let end = start + mat.len() * 4;
                if end > blob.len() {
                    return Err(Error::format(
                        path,
                        format!("tensor '{}' extends past blob end", entry.name),
                    ));
                }
                for (i, v) in mat.data.iter_mut().enumerate() {
                    let at = start + 4 * i;
                    let raw: [u8; 4] = blob[at..at + 4].try_into().unwrap();
                    *v = f32::from_le_bytes(raw) as f64;
                }
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::format(
                path,
                format!("unknown tensor '{}' in directory", entry.name),
            ));
        }
        expected.retain(|n| *n != entry.name);
    }
    if !expected.is_empty() {
        return Err(Error::format(
            path,
            format!("missing tensors in directory: {expected:?}"),
        ));
    }
    Ok(model)
}

fn zero(tensors: &mut Tensors) {
    for (_, m) in tensors.named_mut() {
        m.data.iter_mut().for_each(|v| *v = 0.0);
    }
}
