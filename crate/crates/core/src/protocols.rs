//! Recognition metrics and evaluation settings: general closed-set
//! evaluation, half/full-class zero-shot transfer, K-shot splits and
//! multi-view aggregation.
//!
//! Ties are broken toward the lower index everywhere: a class beats another
//! with an equal score if its index is lower, and in per-class rankings the
//! earlier sample ranks first.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierMatrix;
use crate::datastore::FeatureStore;
use crate::error::{Error, Result};
use crate::headnet::{self, HeadParams, HeadSpec};
use crate::numkit::{norm, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    General,
    ZeroShotHalf,
    ZeroShotFull,
    FewShot,
}

/// A trained head together with the classifier it is scored against.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub spec: &'a HeadSpec,
    pub params: &'a HeadParams,
    pub classifier: &'a ClassifierMatrix,
    pub temperature: f64,
    /// L2-normalize the video embedding before projecting (contrastive heads).
    pub normalize: bool,
}

impl<'a> Model<'a> {
    pub fn new(
        spec: &'a HeadSpec,
        params: &'a HeadParams,
        classifier: &'a ClassifierMatrix,
    ) -> Self {
        Model {
            spec,
            params,
            classifier,
            temperature: 1.0,
            normalize: false,
        }
    }

    pub fn embed(&self, frames: &Matrix) -> Result<Vec<f64>> {
        let mut z = headnet::forward(self.spec, self.params, frames)?;
        if self.normalize {
            let n = norm(&z);
            if n > 0.0 {
                z.iter_mut().for_each(|v| *v /= n);
            }
        }
        Ok(z)
    }

    pub fn logits(&self, frames: &Matrix) -> Result<Vec<f64>> {
        let z = self.embed(frames)?;
        let mut out = self.classifier.weights.matvec(&z)?;
        out.iter_mut().for_each(|v| *v *= self.temperature);
        Ok(out)
    }

    /// `n × c` logits for every sample of the store.
    pub fn score_store(&self, store: &FeatureStore) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = (0..store.len())
            .into_par_iter()
            .map(|i| self.logits(&store.video(i)))
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.classifier.num_classes()));
        }
        Matrix::from_rows(&rows)
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn check_scores(scores: &Matrix, labels: &[usize]) -> Result<()> {
    if scores.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} score rows for {} labels",
            scores.rows(),
            labels.len()
        )));
    }
    if scores.rows() == 0 || scores.cols() == 0 {
        return Err(Error::Dimension("empty score matrix".into()));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= scores.cols()) {
        return Err(Error::Index(format!(
            "label {l} of sample {i} out of range for {} classes",
            scores.cols()
        )));
    }
    Ok(())
}

/// Position of `label` when the row is sorted by descending score.
fn rank_of(row: &[f64], label: usize) -> usize {
    let s = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < label))
        .count()
}

/// Fraction of rows whose label is among the `k` highest scores.
pub fn topk_accuracy(scores: &Matrix, labels: &[usize], k: usize) -> Result<f64> {
    check_scores(scores, labels)?;
    if k == 0 || k > scores.cols() {
        return Err(Error::Dimension(format!(
            "k={k} outside 1..={}",
            scores.cols()
        )));
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| rank_of(scores.row(i), l) < k)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOutcome {
    pub value: f64,
    pub classes_used: usize,
    /// Classes without a single positive sample; left out of the mean.
    pub classes_excluded: usize,
}

/// Average precision of one ranking, given relevance flags in ranked order.
pub fn average_precision(relevant_in_rank_order: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (r, &rel) in relevant_in_rank_order.iter().enumerate() {
        if rel {
            hits += 1;
            total += hits as f64 / (r + 1) as f64;
        }
    }
    (hits > 0).then(|| total / hits as f64)
}

/// Mean over classes of the average precision of ranking all samples by
/// that class's score.
pub fn mean_average_precision(scores: &Matrix, labels: &[usize]) -> Result<MapOutcome> {
    check_scores(scores, labels)?;
    let (n, c) = scores.shape();
    let mut sum = 0.0;
    let mut used = 0;
    for k in 0..c {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[(b, k)].total_cmp(&scores[(a, k)]).then(a.cmp(&b)));
        let rel: Vec<bool> = order.iter().map(|&i| labels[i] == k).collect();
        if let Some(ap) = average_precision(&rel) {
            sum += ap;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::InsufficientData(
            "no class has a positive sample".into(),
        ));
    }
    if used < c {
        log::warn!(
            "mAP: {} of {c} classes have no positives and were excluded",
            c - used
        );
    }
    Ok(MapOutcome {
        value: sum / used as f64,
        classes_used: used,
        classes_excluded: c - used,
    })
}

/// Several clips × crops of one video, each a `T × d` frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub clips: usize,
    pub crops: usize,
    pub views: Vec<Matrix>,
}

impl ViewSet {
    pub fn new(clips: usize, crops: usize, views: Vec<Matrix>) -> Result<Self> {
        if clips * crops == 0 || views.len() != clips * crops {
            return Err(Error::Dimension(format!(
                "{} views for {clips} clips x {crops} crops",
                views.len()
            )));
        }
        Ok(ViewSet {
            clips,
            crops,
            views,
        })
    }

    pub fn single(view: Matrix) -> Self {
        ViewSet {
            clips: 1,
            crops: 1,
            views: vec![view],
        }
    }
}

/// Class probabilities averaged over all views.
pub fn multiview_scores(views: &ViewSet, model: &Model) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; model.classifier.num_classes()];
    for v in &views.views {
        for (a, p) in acc.iter_mut().zip(softmax(&model.logits(v)?)) {
            *a += p;
        }
    }
    let m = views.views.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub repeats: usize,
    pub samples: usize,
    pub top1: f64,
    pub top1_std: Option<f64>,
    pub top5_k: usize,
    pub top5: f64,
    pub top5_std: Option<f64>,
    pub map: Option<f64>,
    pub map_std: Option<f64>,
    pub map_excluded_classes: usize,
    pub class_names: Vec<String>,
    /// Mean accuracy over the repeats that included the class; `None` when
    /// the class never took part or has no test samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Class indices evaluated in each repeat.
    pub subsets: Vec<Vec<usize>>,
    pub per_repeat_top1: Vec<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numeric(format!("cannot serialize report: {e}")))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    /// `class,accuracy` rows; empty accuracy for classes without a value.
    pub fn per_class_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Format {
            offset: 0,
            message: format!("csv: {e}"),
        };
        w.write_record(["class", "accuracy"]).map_err(io)?;
        for (name, acc) in self.class_names.iter().zip(&self.per_class_accuracy) {
            let v = acc.map(|a| a.to_string()).unwrap_or_default();
            w.write_record([name.as_str(), v.as_str()]).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format {
            offset: 0,
            message: format!("csv: {e}"),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_per_class_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.per_class_csv()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Metrics of one pass over a score matrix.
#[derive(Debug, Clone)]
struct Pass {
    top1: f64,
    top5: f64,
    map: Option<MapOutcome>,
    per_class: Vec<Option<f64>>,
}

fn top5_k(c: usize) -> usize {
    c.min(5)
}

fn score_pass(scores: &Matrix, labels: &[usize]) -> Result<Pass> {
    let c = scores.cols();
    let mut correct = vec![0usize; c];
    let mut count = vec![0usize; c];
    for (i, &l) in labels.iter().enumerate() {
        count[l] += 1;
        if rank_of(scores.row(i), l) == 0 {
            correct[l] += 1;
        }
    }
    Ok(Pass {
        top1: topk_accuracy(scores, labels, 1)?,
        top5: topk_accuracy(scores, labels, top5_k(c))?,
        map: mean_average_precision(scores, labels).ok(),
        per_class: correct
            .iter()
            .zip(&count)
            .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
            .collect(),
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Folds per-repeat passes into one report. `subsets[r]` lists the classes
/// (indices into `class_names`) that pass `r` was scored on.
fn merge(
    protocol: Protocol,
    class_names: Vec<String>,
    samples: usize,
    subsets: Vec<Vec<usize>>,
    passes: Vec<Pass>,
) -> EvalReport {
    let repeats = passes.len();
    let top1s: Vec<f64> = passes.iter().map(|p| p.top1).collect();
    let top5s: Vec<f64> = passes.iter().map(|p| p.top5).collect();
    let maps: Vec<f64> = passes
        .iter()
        .filter_map(|p| p.map.map(|m| m.value))
        .collect();
    let (top1, s1) = mean_std(&top1s);
    let (top5, s5) = mean_std(&top5s);
    let (map, map_std) = if maps.len() == repeats {
        let (m, s) = mean_std(&maps);
        (Some(m), (repeats > 1).then_some(s))
    } else {
        (None, None)
    };
    let map_excluded_classes = passes
        .iter()
        .filter_map(|p| p.map.map(|m| m.classes_excluded))
        .max()
        .unwrap_or(0);

    let mut sum = vec![0.0; class_names.len()];
    let mut seen = vec![0usize; class_names.len()];
    for (subset, pass) in subsets.iter().zip(&passes) {
        for (local, &class) in subset.iter().enumerate() {
            if let Some(a) = pass.per_class[local] {
                sum[class] += a;
                seen[class] += 1;
            }
        }
    }
    let per_class_accuracy = sum
        .iter()
        .zip(&seen)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    let k = subsets.first().map_or(0, |s| top5_k(s.len()));
    EvalReport {
        protocol,
        repeats,
        samples,
        top1,
        top1_std: (repeats > 1).then_some(s1),
        top5_k: k,
        top5,
        top5_std: (repeats > 1).then_some(s5),
        map,
        map_std,
        map_excluded_classes,
        class_names,
        per_class_accuracy,
        subsets,
        per_repeat_top1: top1s,
    }
}

fn check_classes(model: &Model, store: &FeatureStore) -> Result<()> {
    if model.classifier.class_names != store.class_names() {
        return Err(Error::Manifest(format!(
            "classifier classes {:?}.. do not match store classes {:?}..",
            model.classifier.class_names.first(),
            store.class_names().first()
        )));
    }
    Ok(())
}

/// Closed-set evaluation of every test sample against every class.
pub fn evaluate(model: &Model, store: &FeatureStore, protocol: Protocol) -> Result<EvalReport> {
    check_classes(model, store)?;
    if store.is_empty() {
        return Err(Error::InsufficientData("evaluation store is empty".into()));
    }
    let scores = model.score_store(store)?;
    let pass = score_pass(&scores, store.labels())?;
    let all: Vec<usize> = (0..store.num_classes()).collect();
    Ok(merge(
        protocol,
        store.class_names().to_vec(),
        store.len(),
        vec![all],
        vec![pass],
    ))
}

/// Multi-view evaluation: `views[v]` holds view `v` of every video, in the
/// same sample order. Scores are view-averaged probabilities.
pub fn evaluate_multiview(
    model: &Model,
    views: &[FeatureStore],
    crops: usize,
) -> Result<EvalReport> {
    let first = views
        .first()
        .ok_or_else(|| Error::InsufficientData("no views given".into()))?;
    check_classes(model, first)?;
    if crops == 0 || !views.len().is_multiple_of(crops) {
        return Err(Error::Dimension(format!(
            "{} views are not a whole number of clips with {crops} crops",
            views.len()
        )));
    }
    for (v, s) in views.iter().enumerate() {
        if s.labels() != first.labels() {
            return Err(Error::Alignment(format!(
                "view {v} does not list the same videos as view 0"
            )));
        }
    }
    if first.is_empty() {
        return Err(Error::InsufficientData("evaluation store is empty".into()));
    }
    let rows: Vec<Vec<f64>> = (0..first.len())
        .into_par_iter()
        .map(|i| {
            let set = ViewSet::new(
                views.len() / crops,
                crops,
                views.iter().map(|s| s.video(i)).collect(),
            )?;
            multiview_scores(&set, model)
        })
        .collect::<Result<_>>()?;
    let scores = Matrix::from_rows(&rows)?;
    let pass = score_pass(&scores, first.labels())?;
    Ok(merge(
        Protocol::General,
        first.class_names().to_vec(),
        first.len(),
        vec![(0..first.num_classes()).collect()],
        vec![pass],
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotOptions {
    pub half: bool,
    pub repeats: usize,
    /// Classes per repeat in half mode; defaults to half of the candidates.
    pub subset_size: Option<usize>,
    /// Classes removed before sampling (and from full-mode evaluation).
    pub exclude: Vec<String>,
}

impl Default for ZeroShotOptions {
    fn default() -> Self {
        ZeroShotOptions {
            half: true,
            repeats: 10,
            subset_size: None,
            exclude: Vec::new(),
        }
    }
}

/// Scores a source-trained head on unseen target classes using the text
/// classifier rows of those classes.
///
/// Half mode draws `⌊c/2⌋` classes uniformly without replacement per repeat,
/// restricts the test set and classifier to them, and reports mean and
/// population standard deviation over repeats.
pub fn zero_shot(
    options: &ZeroShotOptions,
    target: &FeatureStore,
    text_w: &ClassifierMatrix,
    spec: &HeadSpec,
    params: &HeadParams,
    rng: &mut RngState,
) -> Result<EvalReport> {
    let names = target.class_names().to_vec();
    let full_w = text_w.select_classes(&names)?;
    for e in &options.exclude {
        if !names.contains(e) {
            return Err(Error::Manifest(format!(
                "excluded class {e:?} is not a target class"
            )));
        }
    }
    let candidates: Vec<usize> = (0..names.len())
        .filter(|&k| !options.exclude.contains(&names[k]))
        .collect();
    let (protocol, subsets) = if options.half {
        if options.repeats == 0 {
            return Err(Error::Config("zero-shot needs at least one repeat".into()));
        }
        let size = options.subset_size.unwrap_or(candidates.len() / 2);
        if size == 0 || size > candidates.len() {
            return Err(Error::InsufficientData(format!(
                "cannot draw {size} classes from {} candidates",
                candidates.len()
            )));
        }
        let subsets = (0..options.repeats)
            .map(|_| {
                let mut s: Vec<usize> = rng
                    .sample_indices(candidates.len(), size)
                    .into_iter()
                    .map(|j| candidates[j])
                    .collect();
                s.sort_unstable();
                s
            })
            .collect();
        (Protocol::ZeroShotHalf, subsets)
    } else {
        (Protocol::ZeroShotFull, vec![candidates])
    };

    let passes: Vec<Pass> = subsets
        .par_iter()
        .map(|subset| {
            let store = target.restrict_classes(subset);
            if store.is_empty() {
                return Err(Error::InsufficientData(
                    "no test samples in the sampled classes".into(),
                ));
            }
            let w = ClassifierMatrix {
                weights: full_w.weights.select_rows(subset),
                init_kind: full_w.init_kind,
                frozen: true,
                class_names: store.class_names().to_vec(),
            };
            let model = Model::new(spec, params, &w);
            score_pass(&model.score_store(&store)?, store.labels())
        })
        .collect::<Result<_>>()?;
    let samples = subsets
        .first()
        .map_or(0, |s| target.restrict_classes(s).len());
    Ok(merge(protocol, names, samples, subsets, passes))
}

/// Exactly `k` training samples per class, kept in store order. `k = 0`
/// yields an empty store; callers route that case to [`zero_shot`].
pub fn fewshot_split(store: &FeatureStore, k: usize, rng: &mut RngState) -> Result<FeatureStore> {
    if k == 0 {
        return Ok(store.subset(&[]));
    }
    store.sample_per_class(rng, |_, _| Ok(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn topk_examples() {
        let i3 = Matrix::identity(3);
        assert_eq!(topk_accuracy(&i3, &[0, 1, 2], 1).unwrap(), 1.0);
        let u = Matrix::zeros(2, 4);
        assert_eq!(topk_accuracy(&u, &[3, 1], 4).unwrap(), 1.0);
        let s = m(&[&[0.1, 0.9], &[0.8, 0.2]]);
        assert_eq!(topk_accuracy(&s, &[0, 0], 1).unwrap(), 0.5);
        assert!(matches!(
            topk_accuracy(&s, &[0, 2], 1),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn ties_go_to_lower_class() {
        let u = Matrix::zeros(2, 3);
        assert_eq!(topk_accuracy(&u, &[0, 2], 1).unwrap(), 0.5);
    }

    #[test]
    fn ap_examples() {
        assert!((average_precision(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((average_precision(&[false, false, true]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(average_precision(&[false]), None);
        let perfect = Matrix::identity(3);
        let out = mean_average_precision(&perfect, &[0, 1, 2]).unwrap();
        assert_eq!(out.value, 1.0);
    }

    #[test]
    fn map_excludes_empty_classes() {
        let s = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let out = mean_average_precision(&s, &[0, 1]).unwrap();
        assert_eq!(out.classes_excluded, 1);
        assert_eq!(out.value, 1.0);
    }

    #[test]
    fn population_std() {
        let (mean, std) = mean_std(&[1.0, 3.0]);
        assert_eq!((mean, std), (2.0, 1.0));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0, 2.0]);
        let b = softmax(&[1001.0, 1002.0]);
        assert!((a[0] - b[0]).abs() < 1e-15);
    }
}
