//! AdamW with linear warm-up and cosine decay over the head parameters, and
//! over the classifier when it is learnable.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierMatrix, InitKind};
use crate::datastore::{stratified_fraction, FeatureStore};
use crate::error::{Error, Result};
use crate::headnet::{self, HeadKind, HeadParams, HeadSpec, Tape};
use crate::numkit::{Matrix, RngState};
use crate::objectives::{
    classify_batch, infonce_gathered, infonce_local_only, l2_normalize_backward, l2_normalize_rows,
    split_into_shards, Batch, GatherTopology, LogitScale,
};
use crate::protocols::{evaluate, fewshot_split, Model, Protocol};
use crate::tensor::{digest_f64, write_checkpoint, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Cross-entropy against a fixed classifier.
    FrozenCe,
    /// Cross-entropy with the classifier trained jointly.
    LearnableCe,
    /// Video-text InfoNCE with negatives gathered across shards.
    ContrastiveGathered,
    /// Video-text InfoNCE with shard-local negatives only.
    ContrastiveLocal,
}

impl Objective {
    pub fn is_contrastive(self) -> bool {
        matches!(
            self,
            Objective::ContrastiveGathered | Objective::ContrastiveLocal
        )
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "frozen-ce" | "frozen" => Objective::FrozenCe,
            "learnable-ce" | "learnable" => Objective::LearnableCe,
            "contrastive-gathered" | "contrastive" => Objective::ContrastiveGathered,
            "contrastive-local" => Objective::ContrastiveLocal,
            other => return Err(Error::Config(format!("unknown objective {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Samples per step for the cross-entropy objectives.
    pub batch_size: usize,
    pub objective: Objective,
    pub seed: u64,
    pub label_fraction: f64,
    pub shots: Option<usize>,
    /// With `shots`, cycle the few samples so an epoch has as many steps as
    /// one over the full training set.
    pub repeat_to_full: bool,
    /// Contrastive objectives step on `shards · local_batch` samples.
    pub gather: GatherTopology,
    /// Multiplier on the logits of the cross-entropy objectives.
    pub temperature: f64,
    /// Learning-rate multiplier for a learnable classifier.
    pub classifier_lr_scale: f64,
    /// Std of Gaussian noise added to input frames during training.
    pub feature_jitter: f64,
    pub logit_scale: LogitScale,
    /// Evaluate on the held-out store every this many epochs (0 = never).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            warmup_epochs: 5,
            base_lr: 5e-5,
            min_lr: 5e-6,
            schedule: Schedule::Cosine,
            weight_decay: 0.2,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            batch_size: 256,
            objective: Objective::FrozenCe,
            seed: 0,
            label_fraction: 1.0,
            shots: None,
            repeat_to_full: true,
            gather: GatherTopology {
                shards: 1,
                local_batch: 256,
            },
            temperature: 1.0,
            classifier_lr_scale: 1.0,
            feature_jitter: 0.0,
            logit_scale: LogitScale::default(),
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.min_lr >= 0.0 && self.min_lr <= self.base_lr && self.base_lr.is_finite()) {
            return bad(format!(
                "need 0 <= min_lr <= base_lr, got {} and {}",
                self.min_lr, self.base_lr
            ));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return bad(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!(
                "label_fraction {} not in (0, 1]",
                self.label_fraction
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} not in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(self.classifier_lr_scale >= 0.0) || !(self.feature_jitter >= 0.0) {
            return bad("classifier_lr_scale and feature_jitter must be non-negative".into());
        }
        self.gather.validate()
    }

    fn step_batch(&self) -> usize {
        if self.objective.is_contrastive() {
            self.gather.shards * self.gather.local_batch
        } else {
            self.batch_size
        }
    }
}

/// Learning rate used for the update that brings the step counter to
/// `step`: a linear ramp from 0 reaching `base_lr` at the end of warm-up,
/// then a half cosine ending at `min_lr` after the last step of the run.
pub fn lr_at(config: &TrainConfig, step: usize, steps_per_epoch: usize) -> f64 {
    let warm = config.warmup_epochs * steps_per_epoch;
    let total = config.epochs * steps_per_epoch;
    if warm > 0 && step <= warm {
        return config.base_lr * step as f64 / warm as f64;
    }
    if step >= total {
        return config.min_lr;
    }
    let p = (step - warm) as f64 / (total - warm) as f64;
    config.min_lr
        + 0.5 * (config.base_lr - config.min_lr) * (1.0 + (std::f64::consts::PI * p).cos())
}

/// AdamW moment estimates, one pair of buffers per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &[Tensor]) -> Self {
        OptimState {
            m: params.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.len()]).collect(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamOptions {
    pub decay: bool,
    pub lr_scale: f64,
    pub frozen: bool,
}

impl Default for ParamOptions {
    fn default() -> Self {
        ParamOptions {
            decay: true,
            lr_scale: 1.0,
            frozen: false,
        }
    }
}

/// One AdamW update. Decay `p ← p − lr·wd·p` is applied before, and
/// separately from, the bias-corrected adaptive step.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    options: &[ParamOptions],
    opt: &mut OptimState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || options.len() != params.len() || opt.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} params, {} grads, {} options, {} moment buffers",
            params.len(),
            grads.len(),
            options.len(),
            opt.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&opt.m) {
        if p.shape != g.shape || p.len() != g.len() || m.len() != p.len() {
            return Err(Error::Dimension(format!(
                "gradient {} {:?} does not match parameter {} {:?}",
                g.name, g.shape, p.name, p.shape
            )));
        }
    }
    let next = opt.step + 1;
    for ((p, g), o) in params.iter().zip(grads).zip(options) {
        if o.frozen {
            continue;
        }
        if let Some(i) = g.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {} in {}[{i}] at step {next}",
                g.data[i], p.name
            )));
        }
    }
    opt.step = next;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(next as i32);
    let c2 = 1.0 - b2.powi(next as i32);
    for (idx, ((p, g), o)) in params.iter_mut().zip(grads).zip(options).enumerate() {
        if o.frozen {
            continue;
        }
        let lr = lr * o.lr_scale;
        let (m, v) = (&mut opt.m[idx], &mut opt.v[idx]);
        for j in 0..p.data.len() {
            if o.decay {
                p.data[j] -= lr * config.weight_decay * p.data[j];
            }
            let gj = g.data[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            p.data[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Sample order for one epoch of few-shot training: reshuffled passes over
/// `0..n` concatenated and cut to `target_iters · batch` entries (or one full
/// pass when that is shorter).
pub fn fewshot_repeat_plan(
    n_samples: usize,
    target_iters: usize,
    batch: usize,
    rng: &mut RngState,
) -> Vec<usize> {
    if n_samples == 0 {
        return Vec::new();
    }
    let len = (target_iters * batch).max(n_samples);
    let mut plan = Vec::with_capacity(len + n_samples);
    while plan.len() < len {
        let mut cycle: Vec<usize> = (0..n_samples).collect();
        rng.shuffle(&mut cycle);
        plan.extend(cycle);
    }
    plan.truncate(len);
    plan
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
    pub steps: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub top1: f64,
    pub top5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: TrainConfig,
    pub head: HeadSpec,
    pub classifier_kind: InitKind,
    pub train_samples: usize,
    pub steps_per_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub evals: Vec<EvalRecord>,
    pub classifier_digest_before: String,
    pub classifier_digest_after: String,
    pub head_digest: String,
}

impl RunLog {
    /// First epoch (1-based) whose mean training loss is at most `threshold`.
    pub fn epochs_to_loss(&self, threshold: f64) -> Option<usize> {
        self.epochs
            .iter()
            .find(|e| e.loss <= threshold)
            .map(|e| e.epoch)
    }

    /// First epoch (1-based) whose training accuracy is at least `threshold`.
    pub fn epochs_to_accuracy(&self, threshold: f64) -> Option<usize> {
        self.epochs
            .iter()
            .find(|e| e.accuracy >= threshold)
            .map(|e| e.epoch)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// One JSON object per line: each epoch, each evaluation, then a summary.
    pub fn to_jsonl(&self) -> Result<String> {
        let ser = |v: serde_json::Value| {
            serde_json::to_string(&v).map_err(|e| Error::Numeric(format!("log: {e}")))
        };
        let mut out = String::new();
        for e in &self.epochs {
            let mut v = serde_json::to_value(e).map_err(|e| Error::Numeric(e.to_string()))?;
            v["kind"] = "epoch".into();
            out += &(ser(v)? + "\n");
        }
        for e in &self.evals {
            let mut v = serde_json::to_value(e).map_err(|e| Error::Numeric(e.to_string()))?;
            v["kind"] = "eval".into();
            out += &(ser(v)? + "\n");
        }
        out += &(ser(serde_json::json!({
            "kind": "summary",
            "train_samples": self.train_samples,
            "steps_per_epoch": self.steps_per_epoch,
            "classifier_digest_before": self.classifier_digest_before,
            "classifier_digest_after": self.classifier_digest_after,
            "head_digest": self.head_digest,
        }))? + "\n");
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub head: HeadParams,
    pub classifier: ClassifierMatrix,
    pub logit_scale: LogitScale,
    pub log: RunLog,
}

/// Optional inputs to [`run_with`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Start from these head parameters instead of a fresh initialization.
    pub init: Option<HeadParams>,
    /// Held-out store evaluated every `eval_every` epochs.
    pub eval: Option<&'a FeatureStore>,
}

/// Trains a head on `features` against classifier `w`.
pub fn run(
    features: &FeatureStore,
    w: &ClassifierMatrix,
    spec: &HeadSpec,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    run_with(features, w, spec, config, RunOptions::default())
}

// rng streams forked from the run seed
const STREAM_SUBSET: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_ORDER: u64 = 1 << 20;
const STREAM_JITTER: u64 = 2 << 20;

pub fn run_with(
    features: &FeatureStore,
    w: &ClassifierMatrix,
    spec: &HeadSpec,
    config: &TrainConfig,
    options: RunOptions,
) -> Result<TrainOutput> {
    spec.validate()?;
    config.validate()?;
    if features.frames() != spec.frames || features.dim() != spec.dim {
        return Err(Error::Dimension(format!(
            "store has T={} d={}, head expects T={} d={}",
            features.frames(),
            features.dim(),
            spec.frames,
            spec.dim
        )));
    }
    if w.dim() != spec.dim || w.num_classes() != features.num_classes() {
        return Err(Error::Dimension(format!(
            "classifier is {}x{}, data has {} classes of width {}",
            w.num_classes(),
            w.dim(),
            features.num_classes(),
            spec.dim
        )));
    }
    let root = RngState::new(config.seed);
    let mut head = match options.init {
        Some(p) => {
            p.check(spec)?;
            p
        }
        None => headnet::init_params(spec, &mut root.fork(STREAM_INIT))?,
    };
    let mut classifier = w.clone();
    classifier.frozen = config.objective != Objective::LearnableCe;
    let digest_before = classifier.digest();
    let mut logit_scale = config.logit_scale;

    let mut log = RunLog {
        config: config.clone(),
        head: spec.clone(),
        classifier_kind: w.init_kind,
        train_samples: 0,
        steps_per_epoch: 0,
        epochs: Vec::new(),
        evals: Vec::new(),
        classifier_digest_before: digest_before.clone(),
        classifier_digest_after: digest_before,
        head_digest: String::new(),
    };
    if config.epochs == 0 {
        log.head_digest = head_digest(&head);
        return Ok(TrainOutput {
            head,
            classifier,
            logit_scale,
            log,
        });
    }

    // training subset
    let mut sub_rng = root.fork(STREAM_SUBSET);
    let mut data = if config.label_fraction < 1.0 {
        stratified_fraction(features, config.label_fraction, &mut sub_rng)?
    } else {
        features.clone()
    };
    if let Some(k) = config.shots {
        if k == 0 {
            return Err(Error::InsufficientData(
                "0-shot training has no samples; use the zero-shot protocol".into(),
            ));
        }
        data = fewshot_split(&data, k, &mut sub_rng)?;
    }
    if let Some(k) = data.class_counts().iter().position(|&n| n == 0) {
        return Err(Error::InsufficientData(format!(
            "class {} has no training samples",
            data.class_names()[k]
        )));
    }
    let n = data.len();
    let batch = config.step_batch();
    let contrastive = config.objective.is_contrastive();
    let target_iters = features.len().div_ceil(batch);
    let epoch_len = if config.shots.is_some() && config.repeat_to_full {
        (target_iters * batch).max(n)
    } else {
        n
    };
    let steps_per_epoch = if contrastive {
        epoch_len / batch
    } else {
        epoch_len.div_ceil(batch)
    };
    if steps_per_epoch == 0 {
        return Err(Error::InsufficientData(format!(
            "{epoch_len} samples per epoch cannot fill one contrastive batch of {batch}"
        )));
    }
    log.train_samples = n;
    log.steps_per_epoch = steps_per_epoch;

    let mut head_opt = OptimState::new(&head.tensors);
    let head_options: Vec<ParamOptions> = head
        .tensors
        .iter()
        .map(|t| ParamOptions {
            decay: headnet::decays(&t.name),
            ..ParamOptions::default()
        })
        .collect();
    let mut extras = vec![
        Tensor::from_matrix("classifier", &classifier.weights),
        Tensor {
            name: "log_scale".into(),
            shape: vec![1],
            data: vec![logit_scale.log_scale],
        },
    ];
    let extra_options = [
        ParamOptions {
            decay: true,
            lr_scale: config.classifier_lr_scale,
            frozen: classifier.frozen,
        },
        ParamOptions {
            decay: false,
            lr_scale: 1.0,
            frozen: !contrastive,
        },
    ];
    let mut extra_opt = OptimState::new(&extras);

    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut order_rng = root.fork(STREAM_ORDER + epoch as u64);
        let order = if config.shots.is_some() && config.repeat_to_full {
            fewshot_repeat_plan(n, target_iters, batch, &mut order_rng)
        } else {
            let mut o: Vec<usize> = (0..n).collect();
            order_rng.shuffle(&mut o);
            o
        };
        let mut jitter_rng = root.fork(STREAM_JITTER + epoch as u64);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let mut lr = 0.0;
        for s in 0..steps_per_epoch {
            let idx = &order[s * batch..((s + 1) * batch).min(order.len())];
            let inputs: Vec<Matrix> = idx
                .iter()
                .map(|&i| {
                    let mut x = data.video(i);
                    if config.feature_jitter > 0.0 {
                        for v in x.as_mut_slice() {
                            *v += config.feature_jitter * jitter_rng.standard_normal();
                        }
                    }
                    x
                })
                .collect();
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
            let stepped = train_step(
                spec,
                &head,
                &classifier,
                &logit_scale,
                config,
                &inputs,
                &labels,
            )?;
            if !stepped.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is {} at epoch {} step {s}",
                    stepped.loss,
                    epoch + 1
                )));
            }
            lr = lr_at(config, step + 1, steps_per_epoch);
            if !head.tensors.is_empty() {
                adamw_step(
                    &mut head.tensors,
                    &stepped.head_grads,
                    &head_options,
                    &mut head_opt,
                    lr,
                    config,
                )?;
            }
            if !classifier.frozen || contrastive {
                let grads = [
                    Tensor::from_matrix("classifier", &stepped.classifier_grad),
                    Tensor {
                        name: "log_scale".into(),
                        shape: vec![1],
                        data: vec![stepped.log_scale_grad],
                    },
                ];
                adamw_step(
                    &mut extras,
                    &grads,
                    &extra_options,
                    &mut extra_opt,
                    lr,
                    config,
                )?;
                if !classifier.frozen {
                    classifier.weights = extras[0].to_matrix();
                }
                if contrastive {
                    logit_scale.log_scale = extras[1].data[0];
                    logit_scale.clamp();
                    extras[1].data[0] = logit_scale.log_scale;
                }
            }
            loss_sum += stepped.loss * labels.len() as f64;
            correct += stepped.correct;
            seen += labels.len();
            step += 1;
        }
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            lr,
            steps: steps_per_epoch,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if let Some(eval) = options.eval {
            let due = config.eval_every > 0
                && ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs);
            if due {
                let model = Model {
                    spec,
                    params: &head,
                    classifier: &classifier,
                    temperature: config.temperature,
                    normalize: contrastive,
                };
                let r = evaluate(&model, eval, Protocol::General)?;
                log.evals.push(EvalRecord {
                    epoch: epoch + 1,
                    top1: r.top1,
                    top5: r.top5,
                });
            }
        }
        log::debug!(
            "epoch {} loss {:.4} acc {:.4} lr {:.3e}",
            epoch + 1,
            log.epochs[epoch].loss,
            log.epochs[epoch].accuracy,
            lr
        );
    }
    if !head.is_finite() {
        return Err(Error::Numeric("head parameters became non-finite".into()));
    }
    log.classifier_digest_after = classifier.digest();
    log.head_digest = head_digest(&head);
    Ok(TrainOutput {
        head,
        classifier,
        logit_scale,
        log,
    })
}

fn head_digest(head: &HeadParams) -> String {
    let all: Vec<f64> = head
        .tensors
        .iter()
        .flat_map(|t| t.data.iter().copied())
        .collect();
    digest_f64(&all)
}

struct StepResult {
    loss: f64,
    correct: usize,
    head_grads: Vec<Tensor>,
    classifier_grad: Matrix,
    log_scale_grad: f64,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = j;
        }
    }
    best
}

/// Forward, loss and backward for one minibatch. Per-sample head passes run
/// in parallel; their gradients are summed in sample order.
fn train_step(
    spec: &HeadSpec,
    head: &HeadParams,
    classifier: &ClassifierMatrix,
    logit_scale: &LogitScale,
    config: &TrainConfig,
    inputs: &[Matrix],
    labels: &[usize],
) -> Result<StepResult> {
    let passes: Vec<(Vec<f64>, Tape)> = inputs
        .par_iter()
        .map(|x| headnet::forward_with_tape(spec, head, x))
        .collect::<Result<_>>()?;
    let z = Matrix::from_rows(&passes.iter().map(|(z, _)| z.as_slice()).collect::<Vec<_>>())?;
    let (c, d) = classifier.weights.shape();

    let (loss, correct, grad_z, classifier_grad, log_scale_grad) =
        if config.objective.is_contrastive() {
            let (video, norms) = l2_normalize_rows(&z)?;
            // the text side is fixed; only the video embeddings and the scale learn
            let (text_all, _) = l2_normalize_rows(&classifier.weights)?;
            let text = text_all.select_rows(labels);
            let batch = Batch {
                video_embeddings: video.clone(),
                labels: labels.to_vec(),
                paired_text_embeddings: Some(text),
            };
            let shards = split_into_shards(&batch, config.gather.shards)?;
            let out = if config.objective == Objective::ContrastiveGathered {
                infonce_gathered(&shards, logit_scale)?
            } else {
                infonce_local_only(&shards, logit_scale)?
            };
            let g = out.reduced();
            let grad_z = l2_normalize_backward(&video, &norms, &g.video);
            let sims = video.matmul_nt(&text_all)?;
            let correct = labels
                .iter()
                .enumerate()
                .filter(|&(i, &l)| argmax(sims.row(i)) == l)
                .count();
            (
                out.mean_loss(),
                correct,
                grad_z,
                Matrix::zeros(c, d),
                g.log_scale,
            )
        } else {
            let batch = Batch {
                video_embeddings: z,
                labels: labels.to_vec(),
                paired_text_embeddings: None,
            };
            let out = classify_batch(classifier, &batch, config.temperature)?;
            let correct = labels
                .iter()
                .enumerate()
                .filter(|&(i, &l)| argmax(out.logits.row(i)) == l)
                .count();
            let cg = out.grad_weights.unwrap_or_else(|| Matrix::zeros(c, d));
            (out.loss, correct, out.grad_embeddings, cg, 0.0)
        };

    let mut head_grads: Vec<Tensor> = head.tensors.iter().map(Tensor::zeros_like).collect();
    if spec.kind != HeadKind::Tap {
        let per_sample: Vec<Vec<Tensor>> = passes
            .par_iter()
            .enumerate()
            .map(|(i, (_, tape))| tape.backward(spec, head, grad_z.row(i)).map(|g| g.params))
            .collect::<Result<_>>()?;
        for sample in per_sample {
            for (acc, g) in head_grads.iter_mut().zip(sample) {
                for (a, v) in acc.data.iter_mut().zip(&g.data) {
                    *a += v;
                }
            }
        }
    }
    Ok(StepResult {
        loss,
        correct,
        head_grads,
        classifier_grad,
        log_scale_grad,
    })
}

/// Writes a run directory: `config.json`, `log.jsonl`, `head.t4vc`,
/// `classifier.t4vc` and `digest.txt`.
pub fn save_run(dir: impl AsRef<Path>, out: &TrainOutput) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&p, e))
    };
    let config = serde_json::json!({
        "train": out.log.config,
        "head": out.log.head,
        "classifier": {
            "kind": out.classifier.init_kind,
            "frozen": out.classifier.frozen,
            "class_names": out.classifier.class_names,
        },
        "logit_scale": out.logit_scale,
    });
    write(
        "config.json",
        serde_json::to_string_pretty(&config).map_err(|e| Error::Numeric(e.to_string()))? + "\n",
    )?;
    write("log.jsonl", out.log.to_jsonl()?)?;
    write_checkpoint(dir.join("head.t4vc"), &out.head.tensors)?;
    write_checkpoint(
        dir.join("classifier.t4vc"),
        &[Tensor::from_matrix("classifier", &out.classifier.weights)],
    )?;
    write(
        "digest.txt",
        format!(
            "classifier_before {}\nclassifier_after {}\nhead {}\n",
            out.log.classifier_digest_before, out.log.classifier_digest_after, out.log.head_digest
        ),
    )
}
