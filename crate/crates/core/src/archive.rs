//! Portable weight archives: `weights.bin` holds concatenated little-endian
//! `f32` blobs, `weights.json` describes them.
//!
//! Saving writes both files under temporary names and renames the blob
//! first, then the manifest. The manifest records the blob's SHA-256, so a
//! reader that finds a mismatched pair can finish an interrupted commit
//! from the pending manifest; an archive on disk is never half-written.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::Module;
use crate::tensor::Float;

pub const ARCHIVE_VERSION: u32 = 1;
pub const BLOB_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "weights.json";

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveMetadata {
    /// Full model configuration, when the archive holds a complete model.
    #[serde(default)]
    pub model_config: Option<ModelConfig>,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub val_loss: Option<f64>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryInfo {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    length: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    version: u32,
    config_hash: String,
    blob_sha256: String,
    entries: Vec<EntryInfo>,
    metadata: ArchiveMetadata,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightArchive {
    pub config_hash: String,
    pub entries: Vec<ArchiveEntry>,
    pub metadata: ArchiveMetadata,
}

/// Where [`WeightArchive::save_interrupted`] stops, for exercising recovery.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommitStage {
    /// Part of the temporary blob has been written.
    PartialBlob,
    /// Both temporary files are complete; nothing renamed yet.
    TempFilesWritten,
    /// The blob has been renamed into place; the manifest has not.
    BlobRenamed,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn tmp_name(file: &str) -> String {
    format!("{file}.tmp")
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

impl WeightArchive {
    /// Snapshot of every parameter and buffer of `module`, named with `prefix`.
    pub fn from_module<T: Float, M: Module<T>>(
        module: &M,
        prefix: &str,
        config_hash: String,
        metadata: ArchiveMetadata,
    ) -> Self {
        let mut entries = Vec::new();
        module.visit(prefix, &mut |name, p| {
            entries.push(ArchiveEntry {
                name: name.to_string(),
                shape: p.shape.clone(),
                data: p.data.iter().map(|v| v.as_f64() as f32).collect(),
            })
        });
        Self {
            config_hash,
            entries,
            metadata,
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn encode(&self) -> (Vec<u8>, Vec<EntryInfo>) {
        let mut blob = Vec::new();
        let mut infos = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let offset = blob.len() as u64;
            for v in &e.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            infos.push(EntryInfo {
                name: e.name.clone(),
                shape: e.shape.clone(),
                dtype: "f32".into(),
                offset,
                length: blob.len() as u64 - offset,
            });
        }
        (blob, infos)
    }

    fn validate_entries(&self) -> Result<()> {
        let mut names = HashSet::new();
        for e in &self.entries {
            if !names.insert(e.name.as_str()) {
                return Err(Error::Archive(format!("duplicate entry {}", e.name)));
            }
            if e.shape.iter().product::<usize>() != e.data.len() {
                return Err(Error::Archive(format!("entry {} has inconsistent shape", e.name)));
            }
        }
        Ok(())
    }

    /// Atomically writes `weights.bin` and `weights.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.save_impl(dir.as_ref(), None)
    }

    /// Runs the save protocol only up to `stage`, as if the process died.
    #[doc(hidden)]
    pub fn save_interrupted(&self, dir: impl AsRef<Path>, stage: CommitStage) -> Result<()> {
        self.save_impl(dir.as_ref(), Some(stage))
    }

    fn save_impl(&self, dir: &Path, stop: Option<CommitStage>) -> Result<()> {
        self.validate_entries()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (blob, entries) = self.encode();
        let doc = ManifestDoc {
            version: ARCHIVE_VERSION,
            config_hash: self.config_hash.clone(),
            blob_sha256: sha256_hex(&blob),
            entries,
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec_pretty(&doc).expect("manifest serializes");

        let blob_tmp = dir.join(tmp_name(BLOB_FILE));
        let json_tmp = dir.join(tmp_name(MANIFEST_FILE));
        if stop == Some(CommitStage::PartialBlob) {
            return write_synced(&blob_tmp, &blob[..blob.len() / 2]);
        }
        write_synced(&blob_tmp, &blob)?;
        write_synced(&json_tmp, &json)?;
        if stop == Some(CommitStage::TempFilesWritten) {
            return Ok(());
        }
        let blob_path = dir.join(BLOB_FILE);
        fs::rename(&blob_tmp, &blob_path).map_err(|e| Error::io(&blob_path, e))?;
        if stop == Some(CommitStage::BlobRenamed) {
            return Ok(());
        }
        let json_path = dir.join(MANIFEST_FILE);
        fs::rename(&json_tmp, &json_path).map_err(|e| Error::io(&json_path, e))?;
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    fn read_doc(path: &Path) -> Result<ManifestDoc> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let doc: ManifestDoc = serde_json::from_slice(&text)
            .map_err(|e| Error::Archive(format!("{}: {e}", path.display())))?;
        if doc.version != ARCHIVE_VERSION {
            return Err(Error::Archive(format!("unsupported archive version {}", doc.version)));
        }
        Ok(doc)
    }

    /// Reads an archive directory, completing an interrupted commit if one
    /// is pending.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let json_path = dir.join(MANIFEST_FILE);
        let blob_path = dir.join(BLOB_FILE);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let sha = sha256_hex(&blob);
        let doc = match Self::read_doc(&json_path) {
            Ok(doc) if doc.blob_sha256 == sha => doc,
            first => {
                let pending = dir.join(tmp_name(MANIFEST_FILE));
                match Self::read_doc(&pending) {
                    Ok(doc) if doc.blob_sha256 == sha => {
                        fs::rename(&pending, &json_path).map_err(|e| Error::io(&json_path, e))?;
                        doc
                    }
                    _ => {
                        return Err(match first {
                            Err(e) => e,
                            Ok(_) => Error::Archive(format!(
                                "{} does not match its manifest checksum",
                                blob_path.display()
                            )),
                        })
                    }
                }
            }
        };
        Self::decode(doc, &blob)
    }

    fn decode(doc: ManifestDoc, blob: &[u8]) -> Result<Self> {
        let mut entries = Vec::with_capacity(doc.entries.len());
        for info in doc.entries {
            if info.dtype != "f32" {
                return Err(Error::Archive(format!("{}: unsupported dtype {}", info.name, info.dtype)));
            }
            let expected = info.shape.iter().product::<usize>() as u64 * 4;
            if info.length != expected {
                return Err(Error::Archive(format!(
                    "{}: length {} does not match shape {:?}",
                    info.name, info.length, info.shape
                )));
            }
            let end = info.offset.checked_add(info.length).filter(|&e| e <= blob.len() as u64);
            let Some(end) = end else {
                return Err(Error::Archive(format!("{}: blob truncated", info.name)));
            };
            let bytes = &blob[info.offset as usize..end as usize];
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(ArchiveEntry {
                name: info.name,
                shape: info.shape,
                data,
            });
        }
        let archive = Self {
            config_hash: doc.config_hash,
            entries,
            metadata: doc.metadata,
        };
        archive.validate_entries()?;
        Ok(archive)
    }

    /// Copies entries into `module`'s parameters (named under `prefix`).
    ///
    /// Every parameter must be present with a matching shape. With
    /// `allow_extra`, archive entries that the module does not use are
    /// ignored; otherwise they are an error.
    pub fn assign_to<T: Float, M: Module<T>>(
        &self,
        module: &mut M,
        prefix: &str,
        allow_extra: bool,
    ) -> Result<()> {
        let by_name: HashMap<&str, &ArchiveEntry> =
            self.entries.iter().map(|e| (e.name.as_str(), e)).collect();
        let mut used = HashSet::new();
        let mut problem: Option<String> = None;
        module.visit_mut(prefix, &mut |name, p| {
            if problem.is_some() {
                return;
            }
            match by_name.get(name) {
                None => problem = Some(format!("archive lacks parameter {name}")),
                Some(e) if e.shape != p.shape => {
                    problem = Some(format!(
                        "{name}: archive shape {:?} vs model shape {:?}",
                        e.shape, p.shape
                    ))
                }
                Some(e) => {
                    for (dst, &src) in p.data.iter_mut().zip(&e.data) {
                        *dst = T::cast(src as f64);
                    }
                    used.insert(name.to_string());
                }
            }
        });
        if let Some(msg) = problem {
            return Err(Error::ConfigMismatch(msg));
        }
        if !allow_extra {
            if let Some(extra) = self.entries.iter().find(|e| !used.contains(&e.name)) {
                return Err(Error::ConfigMismatch(format!(
                    "archive entry {} has no matching parameter",
                    extra.name
                )));
            }
        }
        Ok(())
    }
}

pub fn blob_path(dir: &Path) -> PathBuf {
    dir.join(BLOB_FILE)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
