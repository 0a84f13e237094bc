//! File formats shared across the pipeline: JSON Lines datasets with
//! sidecar manifests, and the 64-bit checksum used by binary containers.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetRecord, GenConfig};
use crate::error::{Error, Result};
use crate::skeleton::Species;

/// Dataset file format version, recorded in the manifest.
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// FNV-1a 64-bit checksum.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn checksum_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// Writes items as JSON Lines, one compact object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::format(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

/// Sidecar manifest describing how a dataset file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub species: Species,
    pub config: GenConfig,
    /// Checksum of the canonical skeleton definition JSON.
    pub skeleton_hash: String,
    pub record_count: usize,
}

impl DatasetManifest {
    /// Conventional manifest path next to a dataset file.
    pub fn path_for(dataset: &Path) -> PathBuf {
        let mut name = dataset.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        dataset.with_file_name(name)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Version {
                found: manifest.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        Ok(manifest)
    }
}

/// Writes the dataset JSONL plus its sidecar manifest.
pub fn write_dataset(
    path: &Path,
    records: &[DatasetRecord],
    config: &GenConfig,
    skeleton_hash: &str,
) -> Result<()> {
    write_jsonl(path, records)?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        species: records
            .first()
            .map(|r| r.species)
            .unwrap_or(Species::Macaque),
        config: config.clone(),
        skeleton_hash: skeleton_hash.to_string(),
        record_count: records.len(),
    };
    manifest.write(&DatasetManifest::path_for(path))
}

/// Reads a dataset, validating the sidecar manifest when present.
pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let manifest_path = DatasetManifest::path_for(path);
    let manifest = if manifest_path.exists() {
        Some(DatasetManifest::read(&manifest_path)?)
    } else {
        None
    };
    let records: Vec<DatasetRecord> = read_jsonl(path)?;
    if let Some(m) = manifest {
        if m.record_count != records.len() {
            return Err(Error::format(
                path,
                format!(
                    "manifest declares {} records, file has {}",
                    m.record_count,
                    records.len()
                ),
            ));
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{action_catalog, generate};
    use crate::skeleton::species_skeleton;

    #[test]
    fn checksum_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(checksum_hex(b"abc"), format!("{:016x}", fnv1a64(b"abc")));
        assert_ne!(fnv1a64(b"abc"), fnv1a64(b"abd"));
    }

    #[test]
    fn dataset_round_trip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let skeleton = species_skeleton(Species::Macaque);
        let mut config = GenConfig::for_species(Species::Macaque);
        config.target_count = 50;
        config.seed = 3;
        let records = generate(&config, &skeleton, &action_catalog(&skeleton)).unwrap();
        let hash = checksum_hex(skeleton.to_canonical_json().as_bytes());
        write_dataset(&path, &records, &config, &hash).unwrap();

        let loaded = read_dataset(&path).unwrap();
        assert_eq!(loaded, records);

        let manifest = DatasetManifest::read(&DatasetManifest::path_for(&path)).unwrap();
        assert_eq!(manifest.record_count, 50);
        assert_eq!(manifest.skeleton_hash, hash);
    }

    #[test]
    fn manifest_version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl.manifest.json");
        let manifest = DatasetManifest {
            format_version: 42,
            species: Species::Horse,
            config: GenConfig::for_species(Species::Horse),
            skeleton_hash: "0".into(),
            record_count: 0,
        };
        let text = serde_json::to_string(&manifest).unwrap();
        std::fs::write(&path, text).unwrap();
        let err = DatasetManifest::read(&path).unwrap_err();
        assert_eq!(err.code(), "version");
    }

    #[test]
    fn same_seed_writes_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let skeleton = species_skeleton(Species::Horse);
        let mut config = GenConfig::for_species(Species::Horse);
        config.target_count = 30;
        config.seed = 11;
        let actions = action_catalog(&skeleton);
        let hash = checksum_hex(skeleton.to_canonical_json().as_bytes());

        let mut bytes = Vec::new();
        for name in ["a.jsonl", "b.jsonl"] {
            let path = dir.path().join(name);
            let records = generate(&config, &skeleton, &actions).unwrap();
            write_dataset(&path, &records, &config, &hash).unwrap();
            bytes.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
    }
}
