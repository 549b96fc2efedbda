use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::format::{decode_header, read_store};
use super::store::{FeatureStore, Split};

/// Dataset manifest, stored as TOML.
///
/// ```toml
/// name = "toy"
/// class_names = ["eating hotdog", "driving car"]
/// train = "train.t4v"
/// test = "test.t4v"
/// text_embeddings = "text.t4v"
/// zero_shot_classes = 1        # optional; size of each half-class subset
/// zero_shot_exclude = []       # optional; classes removed before sampling
/// notes = "free text"          # optional
/// ```
///
/// File paths are relative to the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub train: String,
    pub test: String,
    pub text_embeddings: Option<String>,
    pub zero_shot_classes: Option<usize>,
    #[serde(default)]
    pub zero_shot_exclude: Vec<String>,
    #[serde(default)]
    pub notes: String,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(name: impl Into<String>, class_names: Vec<String>) -> Self {
        Manifest {
            name: name.into(),
            class_names,
            train: "train.t4v".into(),
            test: "test.t4v".into(),
            text_embeddings: Some("text.t4v".into()),
            zero_shot_classes: None,
            zero_shot_exclude: Vec::new(),
            notes: String::new(),
            base_dir: PathBuf::new(),
        }
    }

    /// Reads and validates a manifest: every referenced file must exist and
    /// carry a valid header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let path = if path.is_dir() {
            path.join("manifest.toml")
        } else if !path.exists() && path.with_extension("toml").is_file() {
            path.with_extension("toml")
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: Manifest = toml::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Manifest(format!("cannot serialize manifest: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Manifest("class_names is empty".into()));
        }
        if let Some(i) = self.class_names.iter().position(|c| c.trim().is_empty()) {
            return Err(Error::Manifest(format!("class name {i} is empty")));
        }
        for excluded in &self.zero_shot_exclude {
            if !self.class_names.contains(excluded) {
                return Err(Error::Manifest(format!(
                    "excluded class {excluded:?} is not in class_names"
                )));
            }
        }
        let files = [
            Some(&self.train),
            Some(&self.test),
            self.text_embeddings.as_ref(),
        ];
        for rel in files.into_iter().flatten() {
            let p = self.resolve(rel);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            decode_header(&bytes).map_err(|e| match e {
                Error::Format { offset, message } => Error::Format {
                    offset,
                    message: format!("{}: {message}", p.display()),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load_split(&self, split: Split) -> Result<FeatureStore> {
        let rel = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        let store = read_store(self.resolve(rel))?;
        store
            .with_class_names(self.class_names.clone())
            .map(|s| s.with_split(split))
    }

    /// Text embeddings as a `c × d` store with one row per class, in
    /// manifest class order.
    pub fn load_text_embeddings(&self) -> Result<FeatureStore> {
        let rel = self
            .text_embeddings
            .as_ref()
            .ok_or_else(|| Error::Manifest("manifest has no text_embeddings file".into()))?;
        let store = read_store(self.resolve(rel))?;
        if store.frames() != 1 || store.len() != self.class_names.len() {
            return Err(Error::Manifest(format!(
                "text embeddings must be {} rows with T=1, found n={} T={}",
                self.class_names.len(),
                store.len(),
                store.frames()
            )));
        }
        if store.labels().iter().enumerate().any(|(i, &l)| l != i) {
            return Err(Error::Manifest(
                "text embedding rows are not in class order".into(),
            ));
        }
        store.with_class_names(self.class_names.clone())
    }
}
