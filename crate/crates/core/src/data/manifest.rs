//! Dataset manifests and validated loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{read_file, sha256_hex, ModalityMatrix};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityEntry {
    pub name: String,
    /// Relative paths resolve against the manifest's directory.
    pub file: PathBuf,
    pub dim: usize,
    /// Modalities sharing a `space_id` live in one joint embedding space.
    pub space_id: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_classes: usize,
    pub num_instances: usize,
    /// Tag of the perceptor family that produced the embeddings, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perceptor: Option<String>,
    pub modalities: Vec<ModalityEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// The unseen modality shares the training modalities' embedding space.
    Weak,
    /// The unseen modality's embedding space is unaligned with the training spaces.
    Strong,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Weak => "weak",
            Regime::Strong => "strong",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Regime::Weak),
            "strong" => Ok(Regime::Strong),
            other => Err(Error::Config(format!("unknown regime {other:?}"))),
        }
    }
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.check_structure()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_file(path)?)
            .map_err(|_| Error::format("manifest", "not UTF-8"))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Field-level checks that need no file access.
    pub fn check_structure(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_instances == 0 {
            return Err(Error::format("manifest", "num_classes and num_instances must be positive"));
        }
        if self.modalities.is_empty() {
            return Err(Error::format("manifest", "no modalities"));
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.dim == 0 {
                return Err(Error::format("manifest", format!("modality {} has dim 0", m.name)));
            }
            if self.modalities[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::format("manifest", format!("duplicate modality {}", m.name)));
            }
        }
        Ok(())
    }

    pub fn modality_index(&self, name: &str) -> Result<usize> {
        self.modalities
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::Config(format!("no modality named {name:?} in {}", self.name)))
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.name.clone()).collect()
    }

    /// Weak iff the test modality's space matches every training modality's space.
    pub fn regime(&self, test_modality: &str) -> Result<Regime> {
        let t = self.modality_index(test_modality)?;
        let space = &self.modalities[t].space_id;
        let aligned = self
            .modalities
            .iter()
            .enumerate()
            .all(|(i, m)| i == t || &m.space_id == space);
        Ok(if aligned { Regime::Weak } else { Regime::Strong })
    }
}

/// A manifest with every modality loaded and verified.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub modalities: Vec<ModalityMatrix>,
}

impl Dataset {
    /// Builds an in-memory dataset, enforcing the same invariants as [`load_dataset`]
    /// except file digests.
    pub fn from_parts(manifest: DatasetManifest, modalities: Vec<ModalityMatrix>) -> Result<Self> {
        manifest.check_structure()?;
        if manifest.modalities.len() != modalities.len() {
            return Err(Error::format(
                "dataset",
                format!(
                    "manifest lists {} modalities, {} given",
                    manifest.modalities.len(),
                    modalities.len()
                ),
            ));
        }
        for (entry, m) in manifest.modalities.iter().zip(&modalities) {
            check_matrix(&manifest, entry, m)?;
        }
        check_alignment(&manifest, &modalities)?;
        Ok(Self { manifest, modalities })
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn num_instances(&self) -> usize {
        self.manifest.num_instances
    }

    pub fn modality(&self, name: &str) -> Result<&ModalityMatrix> {
        Ok(&self.modalities[self.manifest.modality_index(name)?])
    }

    /// Dataset identifier used in plans and records: the name plus a digest of the manifest.
    pub fn id(&self) -> String {
        let digest = sha256_hex(self.manifest.to_json().as_bytes());
        format!("{}@{}", self.manifest.name, &digest[..16])
    }
}

fn check_matrix(manifest: &DatasetManifest, entry: &ModalityEntry, m: &ModalityMatrix) -> Result<()> {
    let file = entry.file.display().to_string();
    if m.rows() != manifest.num_instances {
        return Err(Error::RowCount {
            file,
            expected: manifest.num_instances,
            actual: m.rows(),
        });
    }
    if m.dim() != entry.dim {
        return Err(Error::Dimension(format!(
            "{file}: manifest dim {} but file dim {}",
            entry.dim,
            m.dim()
        )));
    }
    if let Some(&label) = m.labels.iter().find(|&&l| l as usize >= manifest.num_classes) {
        return Err(Error::LabelRange {
            file,
            label,
            classes: manifest.num_classes,
        });
    }
    Ok(())
}

fn check_alignment(manifest: &DatasetManifest, modalities: &[ModalityMatrix]) -> Result<()> {
    let first = &modalities[0];
    for (entry, m) in manifest.modalities.iter().zip(modalities).skip(1) {
        if let Some(i) = (0..m.rows()).find(|&i| m.labels[i] != first.labels[i]) {
            return Err(Error::format(
                "dataset",
                format!("labels of {} disagree with {} at row {i}", entry.name, manifest.modalities[0].name),
            ));
        }
    }
    Ok(())
}

fn load_entry(manifest: &DatasetManifest, root: &Path, entry: &ModalityEntry) -> Result<ModalityMatrix> {
    let path = root.join(&entry.file);
    let bytes = read_file(&path)?;
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(&entry.sha256) {
        return Err(Error::DigestMismatch {
            file: entry.file.display().to_string(),
            expected: entry.sha256.clone(),
            actual,
        });
    }
    let m = ModalityMatrix::from_bytes(&bytes, &entry.file.display().to_string())?;
    check_matrix(manifest, entry, &m)?;
    Ok(m)
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Accepts either a manifest file or a directory containing `manifest.json`.
pub fn resolve_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads and verifies every modality, failing on the first problem.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let path = resolve_manifest_path(path);
    let manifest = DatasetManifest::read(&path)?;
    let root = manifest_root(&path);
    let modalities = manifest
        .modalities
        .iter()
        .map(|e| load_entry(&manifest, &root, e))
        .collect::<Result<Vec<_>>>()?;
    check_alignment(&manifest, &modalities)?;
    Ok(Dataset { manifest, modalities })
}

/// Every problem found in a dataset; empty when it is valid.
#[derive(Debug)]
pub struct ValidationReport {
    pub manifest: Option<DatasetManifest>,
    pub issues: Vec<Error>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Like [`load_dataset`] but keeps going after a bad modality so all issues are reported.
pub fn validate_dataset(path: &Path) -> ValidationReport {
    let path = resolve_manifest_path(path);
    let manifest = match DatasetManifest::read(&path) {
        Ok(m) => m,
        Err(e) => {
            return ValidationReport {
                manifest: None,
                issues: vec![e],
            }
        }
    };
    let root = manifest_root(&path);
    let mut issues = Vec::new();
    let mut loaded = Vec::new();
    for e in &manifest.modalities {
        match load_entry(&manifest, &root, e) {
            Ok(m) => loaded.push(m),
            Err(err) => issues.push(err),
        }
    }
    if issues.is_empty() {
        if let Err(e) = check_alignment(&manifest, &loaded) {
            issues.push(e);
        }
    }
    ValidationReport {
        manifest: Some(manifest),
        issues,
    }
}
