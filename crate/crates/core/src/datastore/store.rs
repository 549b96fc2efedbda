use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// `n` videos, each `frames × dim` per-frame embeddings, with labels.
///
/// Payload is held as `f64` (widened from the on-disk `f32`), laid out
/// video-major, then frame, then channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    frames: usize,
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    split: Split,
    class_names: Vec<String>,
}

impl FeatureStore {
    pub fn new(
        frames: usize,
        dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        split: Split,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Dimension(format!(
                "store needs frames >= 1 and dim >= 1, got T={frames}, d={dim}"
            )));
        }
        if features.len() != labels.len() * frames * dim {
            return Err(Error::Dimension(format!(
                "payload has {} values, expected {}x{}x{}",
                features.len(),
                labels.len(),
                frames,
                dim
            )));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= class_names.len())
        {
            return Err(Error::Index(format!(
                "sample {i} has label {l} but only {} classes are named",
                class_names.len()
            )));
        }
        Ok(FeatureStore {
            frames,
            dim,
            features,
            labels,
            split,
            class_names,
        })
    }

    /// A single-frame store holding one row per class: the layout used for
    /// text-embedding files.
    pub fn from_class_rows(rows: &Matrix, class_names: Vec<String>) -> Result<Self> {
        if rows.rows() != class_names.len() {
            return Err(Error::Manifest(format!(
                "{} embedding rows for {} class names",
                rows.rows(),
                class_names.len()
            )));
        }
        let labels = (0..rows.rows()).collect();
        FeatureStore::new(
            1,
            rows.cols(),
            rows.as_slice().to_vec(),
            labels,
            Split::Train,
            class_names,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn payload(&self) -> &[f64] {
        &self.features
    }

    /// Frame features of video `i` as a `frames × dim` matrix.
    pub fn video(&self, i: usize) -> Matrix {
        let span = self.frames * self.dim;
        let data = self.features[i * span..(i + 1) * span].to_vec();
        Matrix::from_vec(self.frames, self.dim, data).expect("store shape is validated")
    }

    /// Temporal-average-pooled embeddings, one row per video.
    pub fn pooled(&self) -> Matrix {
        let mut out = Matrix::zeros(self.len(), self.dim);
        for i in 0..self.len() {
            let v = self.video(i).column_mean();
            out.row_mut(i).copy_from_slice(&v);
        }
        out
    }

    /// Single-frame stores viewed as a `n × dim` matrix.
    pub fn as_rows(&self) -> Result<Matrix> {
        if self.frames != 1 {
            return Err(Error::Dimension(format!(
                "expected a single-frame store, found T={}",
                self.frames
            )));
        }
        Matrix::from_vec(self.len(), self.dim, self.features.clone())
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Replaces the class list; every label must stay in range.
    pub fn with_class_names(self, class_names: Vec<String>) -> Result<Self> {
        FeatureStore::new(
            self.frames,
            self.dim,
            self.features,
            self.labels,
            self.split,
            class_names,
        )
    }

    /// Samples with the given indices, in the given order.
    pub fn subset(&self, idx: &[usize]) -> FeatureStore {
        let span = self.frames * self.dim;
        let mut features = Vec::with_capacity(idx.len() * span);
        for &i in idx {
            features.extend_from_slice(&self.features[i * span..(i + 1) * span]);
        }
        FeatureStore {
            frames: self.frames,
            dim: self.dim,
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
            class_names: self.class_names.clone(),
        }
    }

    /// Keeps only samples of the listed classes and renumbers labels to the
    /// position of each class in `classes`.
    pub fn restrict_classes(&self, classes: &[usize]) -> FeatureStore {
        let mut remap = vec![None; self.num_classes()];
        for (new, &old) in classes.iter().enumerate() {
            remap[old] = Some(new);
        }
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| remap[self.labels[i]].is_some())
            .collect();
        let mut out = self.subset(&idx);
        out.labels = idx
            .iter()
            .map(|&i| remap[self.labels[i]].expect("filtered"))
            .collect();
        out.class_names = classes
            .iter()
            .map(|&c| self.class_names[c].clone())
            .collect();
        out
    }

    /// Sample indices grouped by class, each group in store order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Picks `count(class, available)` samples from each class uniformly
    /// without replacement. Selected samples keep their store order.
    pub(crate) fn sample_per_class(
        &self,
        rng: &mut RngState,
        mut count: impl FnMut(usize, usize) -> Result<usize>,
    ) -> Result<FeatureStore> {
        let mut keep = Vec::new();
        for (class, members) in self.indices_by_class().iter().enumerate() {
            let k = count(class, members.len())?;
            if k > members.len() {
                return Err(Error::InsufficientData(format!(
                    "class {} has {} samples, {} requested",
                    self.class_names[class],
                    members.len(),
                    k
                )));
            }
            keep.extend(
                rng.sample_indices(members.len(), k)
                    .into_iter()
                    .map(|j| members[j]),
            );
        }
        keep.sort_unstable();
        Ok(self.subset(&keep))
    }
}

/// Per-class `⌈fraction · n_k⌉` samples, chosen under `rng`.
pub fn stratified_fraction(
    store: &FeatureStore,
    fraction: f64,
    rng: &mut RngState,
) -> Result<FeatureStore> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "label fraction must be in (0, 1], got {fraction}"
        )));
    }
    store.sample_per_class(rng, |_, n| Ok(fraction_count(fraction, n)))
}

/// `⌈fraction · n⌉`, ignoring representation error in the product
/// (0.7 · 10 evaluates to 7.000000000000001).
pub(crate) fn fraction_count(fraction: f64, n: usize) -> usize {
    let exact = fraction * n as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 * (n as f64).max(1.0) {
        rounded as usize
    } else {
        exact.ceil() as usize
    }
}
