//! Cross-entropy against a (frozen or learnable) classifier, and the
//! cross-entropy form of InfoNCE with emulated data-parallel batch gathering.

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierMatrix;
use crate::error::{Error, Result};
use crate::numkit::{norm, Matrix};

/// Rows of contrastive inputs must be unit norm within this tolerance.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// `−log softmax(logits)[label]` and its gradient `softmax − onehot`.
pub fn ce_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Index(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (logits[label] - m);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    // p_label − 1 written as −Σ_{j≠label} p_j, so the gradient sums to zero
    grad[label] = 0.0;
    grad[label] = -grad.iter().sum::<f64>();
    Ok((loss, grad))
}

/// Minibatch of video embeddings with labels, and, in contrastive mode,
/// the paired text embedding of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub video_embeddings: Matrix,
    pub labels: Vec<usize>,
    pub paired_text_embeddings: Option<Matrix>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.video_embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOutput {
    pub loss: f64,
    /// Per-sample gradient of the mean loss with respect to each embedding.
    pub grad_embeddings: Matrix,
    /// Present only when the classifier is trainable.
    pub grad_weights: Option<Matrix>,
    pub logits: Matrix,
}

/// Mean cross-entropy of `temperature · W · z` over the batch.
pub fn classify_batch(
    w: &ClassifierMatrix,
    batch: &Batch,
    temperature: f64,
) -> Result<ClassifyOutput> {
    let b = batch.len();
    let (c, d) = w.weights.shape();
    if batch.video_embeddings.cols() != d {
        return Err(Error::Dimension(format!(
            "embeddings have width {}, classifier expects {d}",
            batch.video_embeddings.cols()
        )));
    }
    if batch.labels.len() != b {
        return Err(Error::Dimension(format!(
            "{} labels for {b} embeddings",
            batch.labels.len()
        )));
    }
    if b == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    let logits = batch
        .video_embeddings
        .matmul_nt(&w.weights)?
        .scale(temperature);
    let mut dlogits = Matrix::zeros(b, c);
    let mut loss = 0.0;
    for i in 0..b {
        let (l, g) = ce_loss(logits.row(i), batch.labels[i])?;
        loss += l;
        for (o, gv) in dlogits.row_mut(i).iter_mut().zip(&g) {
            *o = gv * temperature / b as f64;
        }
    }
    let grad_embeddings = dlogits.matmul(&w.weights)?;
    let grad_weights = if w.frozen {
        None
    } else {
        Some(dlogits.matmul_tn(&batch.video_embeddings)?)
    };
    Ok(ClassifyOutput {
        loss: loss / b as f64,
        grad_embeddings,
        grad_weights,
        logits,
    })
}

/// Number of data-parallel shards and the per-shard batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatherTopology {
    pub shards: usize,
    pub local_batch: usize,
}

impl GatherTopology {
    pub fn validate(&self) -> Result<()> {
        if self.shards == 0 || self.local_batch == 0 {
            return Err(Error::Config(format!(
                "gather topology needs M >= 1 and N >= 1, got M={}, N={}",
                self.shards, self.local_batch
            )));
        }
        Ok(())
    }
}

/// Trainable temperature `s = min(exp(log_scale), clamp_max)` applied to
/// cosine similarities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitScale {
    pub log_scale: f64,
    pub clamp_max: f64,
}

impl Default for LogitScale {
    fn default() -> Self {
        LogitScale {
            log_scale: (1.0f64 / 0.07).ln(),
            clamp_max: 100.0,
        }
    }
}

impl LogitScale {
    pub fn value(&self) -> f64 {
        self.log_scale.exp().min(self.clamp_max)
    }

    fn clamped(&self) -> bool {
        self.log_scale.exp() > self.clamp_max
    }

    /// Pulls `log_scale` back so that `exp(log_scale) <= clamp_max`.
    pub fn clamp(&mut self) {
        let cap = self.clamp_max.ln();
        if self.log_scale > cap {
            self.log_scale = cap;
        }
    }
}

/// Gradients of one shard's loss, in the global (gathered) layout: rows
/// `i·N .. (i+1)·N` belong to shard `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrads {
    pub video: Matrix,
    pub text: Matrix,
    pub log_scale: f64,
}

impl ContrastiveGrads {
    fn zeros(rows: usize, dim: usize) -> Self {
        ContrastiveGrads {
            video: Matrix::zeros(rows, dim),
            text: Matrix::zeros(rows, dim),
            log_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardedContrastive {
    pub losses: Vec<f64>,
    pub grads: Vec<ContrastiveGrads>,
}

impl ShardedContrastive {
    /// Mean loss across shards.
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }

    /// Gradients averaged across shards in shard order, the way a
    /// data-parallel all-reduce would.
    pub fn reduced(&self) -> ContrastiveGrads {
        let m = self.grads.len() as f64;
        let first = &self.grads[0];
        let mut out = ContrastiveGrads::zeros(first.video.rows(), first.video.cols());
        for g in &self.grads {
            out.video.add_assign(&g.video);
            out.text.add_assign(&g.text);
            out.log_scale += g.log_scale;
        }
        out.video = out.video.scale(1.0 / m);
        out.text = out.text.scale(1.0 / m);
        out.log_scale /= m;
        out
    }
}

fn check_shards(local_batches: &[Batch]) -> Result<(usize, usize)> {
    let first = local_batches
        .first()
        .ok_or_else(|| Error::Config("no shards given".into()))?;
    let n = first.len();
    let d = first.video_embeddings.cols();
    for (s, b) in local_batches.iter().enumerate() {
        if b.len() != n || b.video_embeddings.cols() != d || n == 0 {
            return Err(Error::Dimension(format!(
                "shard {s} has {}x{} embeddings, expected {n}x{d} with N >= 1",
                b.len(),
                b.video_embeddings.cols()
            )));
        }
        let text = b
            .paired_text_embeddings
            .as_ref()
            .ok_or_else(|| Error::Config(format!("shard {s} has no paired text embeddings")))?;
        if text.shape() != b.video_embeddings.shape() {
            return Err(Error::Dimension(format!(
                "shard {s} text embeddings are {}x{}, video {}x{}",
                text.rows(),
                text.cols(),
                n,
                d
            )));
        }
        for m in [&b.video_embeddings, text] {
            for (r, row) in m.iter_rows().enumerate() {
                let nr = norm(row);
                if (nr - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(Error::Normalization {
                        row: s * n + r,
                        norm: nr,
                    });
                }
            }
        }
    }
    Ok((n, d))
}

fn concat(rows: impl Iterator<Item = Matrix>, d: usize) -> Matrix {
    let mut data = Vec::new();
    let mut count = 0;
    for m in rows {
        count += m.rows();
        data.extend_from_slice(m.as_slice());
    }
    Matrix::from_vec(count, d, data).expect("shards share a width")
}

/// One direction of the contrastive loss for `queries` (local rows) against
/// `keys` (all candidates). Row `r` has its positive at key `offset + r`.
/// Returns the mean CE over rows and accumulates gradients.
#[allow(clippy::too_many_arguments)]
fn directional_ce(
    queries: &Matrix,
    keys: &Matrix,
    offset: usize,
    scale: f64,
    weight: f64,
    dq: &mut Matrix,
    dq_offset: usize,
    dk: &mut Matrix,
    dk_offset: usize,
) -> Result<(f64, f64)> {
    let n = queries.rows();
    let sims = queries.matmul_nt(keys)?;
    let mut loss = 0.0;
    let mut dscale = 0.0;
    for r in 0..n {
        let logits: Vec<f64> = sims.row(r).iter().map(|s| s * scale).collect();
        let (l, g) = ce_loss(&logits, offset + r)?;
        loss += l;
        let coeff = weight / n as f64;
        for (j, gj) in g.iter().enumerate() {
            let gl = gj * coeff;
            if gl == 0.0 {
                continue;
            }
            dscale += gl * sims[(r, j)];
            let gs = gl * scale;
            for (o, kv) in dq.row_mut(dq_offset + r).iter_mut().zip(keys.row(j)) {
                *o += gs * kv;
            }
            for (o, qv) in dk.row_mut(dk_offset + j).iter_mut().zip(queries.row(r)) {
                *o += gs * qv;
            }
        }
    }
    Ok((loss / n as f64, dscale))
}

/// Contrastive loss where every shard sees the gathered embeddings of all
/// shards: per shard an `N × NM` similarity block in each direction, with
/// positives at global pair index `shard·N + row`.
///
/// Gradients are taken with respect to all gathered embeddings (the gather
/// routes gradient slices back to their owning shard), so averaging them
/// across shards reproduces the single-process `NM`-batch gradient.
pub fn infonce_gathered(local_batches: &[Batch], scale: &LogitScale) -> Result<ShardedContrastive> {
    let (n, d) = check_shards(local_batches)?;
    let m = local_batches.len();
    let all_video = concat(local_batches.iter().map(|b| b.video_embeddings.clone()), d);
    let all_text = concat(
        local_batches
            .iter()
            .map(|b| b.paired_text_embeddings.clone().expect("checked")),
        d,
    );
    let s = scale.value();
    let mut losses = Vec::with_capacity(m);
    let mut grads = Vec::with_capacity(m);
    for (i, b) in local_batches.iter().enumerate() {
        let text = b.paired_text_embeddings.as_ref().expect("checked");
        let mut g = ContrastiveGrads::zeros(n * m, d);
        let (lv, sv) = directional_ce(
            &b.video_embeddings,
            &all_text,
            i * n,
            s,
            0.5,
            &mut g.video,
            i * n,
            &mut g.text,
            0,
        )?;
        let (lt, st) = directional_ce(
            text,
            &all_video,
            i * n,
            s,
            0.5,
            &mut g.text,
            i * n,
            &mut g.video,
            0,
        )?;
        g.log_scale = if scale.clamped() { 0.0 } else { (sv + st) * s };
        losses.push(0.5 * (lv + lt));
        grads.push(g);
    }
    Ok(ShardedContrastive { losses, grads })
}

/// Contrastive loss without gathering: each shard only contrasts its own
/// `N` pairs. Gradients use the same global layout as
/// [`infonce_gathered`], zero outside the shard's own rows.
pub fn infonce_local_only(
    local_batches: &[Batch],
    scale: &LogitScale,
) -> Result<ShardedContrastive> {
    let (n, d) = check_shards(local_batches)?;
    let m = local_batches.len();
    let s = scale.value();
    let mut losses = Vec::with_capacity(m);
    let mut grads = Vec::with_capacity(m);
    for (i, b) in local_batches.iter().enumerate() {
        let text = b.paired_text_embeddings.as_ref().expect("checked");
        let mut g = ContrastiveGrads::zeros(n * m, d);
        let (lv, sv) = directional_ce(
            &b.video_embeddings,
            text,
            0,
            s,
            0.5,
            &mut g.video,
            i * n,
            &mut g.text,
            i * n,
        )?;
        let (lt, st) = directional_ce(
            text,
            &b.video_embeddings,
            0,
            s,
            0.5,
            &mut g.text,
            i * n,
            &mut g.video,
            i * n,
        )?;
        g.log_scale = if scale.clamped() { 0.0 } else { (sv + st) * s };
        losses.push(0.5 * (lv + lt));
        grads.push(g);
    }
    Ok(ShardedContrastive { losses, grads })
}

/// Splits a global batch into `shards` consecutive local batches.
pub fn split_into_shards(batch: &Batch, shards: usize) -> Result<Vec<Batch>> {
    if shards == 0 || !batch.len().is_multiple_of(shards) {
        return Err(Error::Dimension(format!(
            "batch of {} cannot be split into {shards} equal shards",
            batch.len()
        )));
    }
    let n = batch.len() / shards;
    Ok((0..shards)
        .map(|s| {
            let idx: Vec<usize> = (s * n..(s + 1) * n).collect();
            Batch {
                video_embeddings: batch.video_embeddings.select_rows(&idx),
                labels: idx.iter().map(|&i| batch.labels[i]).collect(),
                paired_text_embeddings: batch
                    .paired_text_embeddings
                    .as_ref()
                    .map(|t| t.select_rows(&idx)),
            }
        })
        .collect())
}

/// Row-wise L2 normalization; also returns the original norms for
/// [`l2_normalize_backward`].
pub fn l2_normalize_rows(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let nr = norm(m.row(r));
        if !(nr > 0.0) {
            return Err(Error::DegenerateRow { row: r });
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= nr);
        norms.push(nr);
    }
    Ok((out, norms))
}

/// Gradient through `y = x / ‖x‖`: `dx = (dy − y·(y·dy)) / ‖x‖`.
pub fn l2_normalize_backward(normalized: &Matrix, norms: &[f64], dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(dy.rows(), dy.cols());
    for r in 0..dy.rows() {
        let y = normalized.row(r);
        let g = dy.row(r);
        let proj: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((o, yv), gv) in dx.row_mut(r).iter_mut().zip(y).zip(g) {
            *o = (gv - yv * proj) / norms[r];
        }
    }
    dx
}
