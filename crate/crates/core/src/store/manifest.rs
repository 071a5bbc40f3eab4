use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{read_embedding_file, read_embedding_header, read_label_file, EmbeddingMatrix, LabelVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dataset: String,
    pub split: Split,
    pub model: String,
    /// 0 is the token-embedding output, L the output of transformer block L.
    pub layer: u32,
    pub dim: usize,
    pub n_samples: usize,
    pub path: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ManifestDoc {
    Full {
        entries: Vec<ManifestEntry>,
        #[serde(default)]
        labels: BTreeMap<Split, PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metadata: Option<serde_json::Value>,
    },
    Bare(Vec<ManifestEntry>),
}

/// Validated catalog of embedding and label files for one dataset.
///
/// Paths inside the document are resolved against the manifest's directory.
#[derive(Clone, Debug)]
pub struct Manifest {
    base_dir: PathBuf,
    entries: Vec<ManifestEntry>,
    labels: BTreeMap<Split, PathBuf>,
    metadata: Option<serde_json::Value>,
}

impl Manifest {
    /// Builds a manifest in memory without touching the filesystem.
    pub fn new(
        base_dir: impl Into<PathBuf>,
        entries: Vec<ManifestEntry>,
        labels: BTreeMap<Split, PathBuf>,
    ) -> Self {
        Self {
            base_dir: base_dir.into(),
            entries,
            labels,
            metadata: None,
        }
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> Self {
        self.metadata = Some(metadata);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: ManifestDoc = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let (entries, labels, metadata) = match doc {
            ManifestDoc::Full {
                entries,
                labels,
                metadata,
            } => (entries, labels, metadata),
            ManifestDoc::Bare(entries) => (entries, BTreeMap::new(), None),
        };
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let manifest = Self {
            base_dir,
            entries,
            labels,
            metadata,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = ManifestDoc::Full {
            entries: self.entries.clone(),
            labels: self.labels.clone(),
            metadata: self.metadata.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Checks every entry against its file header, per-split sample
    /// alignment, label files, and uniqueness of (split, model, layer).
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Manifest("manifest has no entries".into()));
        }
        let datasets: BTreeSet<&str> = self.entries.iter().map(|e| e.dataset.as_str()).collect();
        if datasets.len() > 1 {
            return Err(Error::Manifest(format!(
                "a manifest describes one dataset, found {datasets:?}"
            )));
        }

        let mut seen = BTreeSet::new();
        let mut split_counts: BTreeMap<Split, (usize, &ManifestEntry)> = BTreeMap::new();
        for entry in &self.entries {
            if !seen.insert((entry.split, entry.model.as_str(), entry.layer)) {
                return Err(Error::Manifest(format!(
                    "duplicate entry for {}:{} in split {}",
                    entry.model, entry.layer, entry.split
                )));
            }
            let path = self.resolve(&entry.path);
            if !path.exists() {
                return Err(Error::Manifest(format!(
                    "missing embedding file {}",
                    path.display()
                )));
            }
            let header = read_embedding_header(&path)?;
            if header.dim as usize != entry.dim {
                return Err(Error::DimMismatch {
                    path,
                    expected: entry.dim,
                    found: header.dim as usize,
                });
            }
            if header.n_samples as usize != entry.n_samples {
                return Err(Error::Alignment {
                    split: entry.split.to_string(),
                    detail: format!(
                        "{} declares {} samples, file header has {}",
                        path.display(),
                        entry.n_samples,
                        header.n_samples
                    ),
                });
            }
            match split_counts.get(&entry.split) {
                Some(&(n, first)) if n != entry.n_samples => {
                    return Err(Error::Alignment {
                        split: entry.split.to_string(),
                        detail: format!(
                            "{}:{} has {} samples but {}:{} has {}",
                            entry.model, entry.layer, entry.n_samples, first.model, first.layer, n
                        ),
                    });
                }
                Some(_) => {}
                None => {
                    split_counts.insert(entry.split, (entry.n_samples, entry));
                }
            }
        }

        for (split, rel) in &self.labels {
            let path = self.resolve(rel);
            if !path.exists() {
                return Err(Error::Manifest(format!("missing label file {}", path.display())));
            }
            let labels = read_label_file(&path)?;
            if let Some(&(n, _)) = split_counts.get(split) {
                if labels.n_samples() != n {
                    return Err(Error::Alignment {
                        split: split.to_string(),
                        detail: format!(
                            "label file has {} samples, embeddings have {n}",
                            labels.n_samples()
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    pub fn dataset(&self) -> &str {
        self.entries.first().map_or("", |e| e.dataset.as_str())
    }

    /// Model names in order of first appearance.
    pub fn models(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.model) {
                out.push(e.model.clone());
            }
        }
        out
    }

    /// Sorted layer indices available for `model` in `split`.
    pub fn layers(&self, model: &str, split: Split) -> Vec<u32> {
        let set: BTreeSet<u32> = self
            .entries
            .iter()
            .filter(|e| e.model == model && e.split == split)
            .map(|e| e.layer)
            .collect();
        set.into_iter().collect()
    }

    pub fn max_layer(&self, model: &str) -> Option<u32> {
        self.entries
            .iter()
            .filter(|e| e.model == model)
            .map(|e| e.layer)
            .max()
    }

    pub fn entry(&self, split: Split, model: &str, layer: u32) -> Option<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.split == split && e.model == model && e.layer == layer)
    }

    pub fn require(&self, split: Split, model: &str, layer: u32) -> Result<&ManifestEntry> {
        self.entry(split, model, layer).ok_or_else(|| {
            Error::Manifest(format!("no {split} embedding for {model}:{layer}"))
        })
    }

    pub fn n_samples(&self, split: Split) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.split == split)
            .map(|e| e.n_samples)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.base_dir.join(rel)
        }
    }

    pub fn load_matrix(&self, split: Split, model: &str, layer: u32) -> Result<EmbeddingMatrix> {
        let entry = self.require(split, model, layer)?;
        read_embedding_file(self.resolve(&entry.path))
    }

    pub fn load_labels(&self, split: Split) -> Result<LabelVector> {
        let rel = self
            .labels
            .get(&split)
            .ok_or_else(|| Error::Manifest(format!("no label file for split {split}")))?;
        read_label_file(self.resolve(rel))
    }
}
