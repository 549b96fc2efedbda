//! Test oracles and shared cases for the integration tests.
//!
//! The oracles here are written the slow, obvious way and share no code
//! with the library beyond the `Matrix` container.

#![allow(dead_code)]

pub mod grad;

use t4v_core::datastore::{FeatureStore, Split};
use t4v_core::numkit::{Matrix, RngState};

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut aug = vec![vec![0.0; 2 * n]; n];
    for i in 0..n {
        for j in 0..n {
            aug[i][j] = a[(i, j)];
        }
        aug[i][n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    for j in 0..2 * n {
                        aug[r][j] -= f * aug[col][j];
                    }
                }
            }
        }
    }
    let mut inv = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            inv[(i, j)] = aug[i][n + j];
        }
    }
    inv
}

/// Temporal mean of every video.
pub fn pooled(store: &FeatureStore) -> Vec<Vec<f64>> {
    let (t, d) = (store.frames(), store.dim());
    store
        .payload()
        .chunks(t * d)
        .map(|v| {
            (0..d)
                .map(|j| (0..t).map(|f| v[f * d + j]).sum::<f64>() / t as f64)
                .collect()
        })
        .collect()
}

/// Class means and pooled within-class covariance (denominator `n − c`).
pub fn class_statistics(store: &FeatureStore) -> (Vec<Vec<f64>>, Matrix) {
    let x = pooled(store);
    let (c, d) = (store.num_classes(), store.dim());
    let mut means = vec![vec![0.0; d]; c];
    let mut counts = vec![0usize; c];
    for (row, &l) in x.iter().zip(store.labels()) {
        counts[l] += 1;
        for j in 0..d {
            means[l][j] += row[j];
        }
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= n as f64);
    }
    let mut cov = Matrix::zeros(d, d);
    for (row, &l) in x.iter().zip(store.labels()) {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (row[a] - means[l][a]) * (row[b] - means[l][b]);
            }
        }
    }
    let denom = (store.len() - c) as f64;
    (means, cov.map(|v| v / denom))
}

/// Rows `Σ_w⁻¹ μ_k`.
pub fn lda_oracle(store: &FeatureStore) -> Matrix {
    let (means, cov) = class_statistics(store);
    let inv = gauss_jordan_inverse(&cov);
    let rows: Vec<Vec<f64>> = means.iter().map(|m| inv.matvec(m).unwrap()).collect();
    Matrix::from_rows(&rows).unwrap()
}

/// Gaussian classes with random means and a shared random covariance.
pub fn gaussian_classes(c: usize, d: usize, per_class: usize, rng: &mut RngState) -> FeatureStore {
    let mix: Vec<f64> = (0..d * d)
        .map(|_| rng.standard_normal() / (d as f64).sqrt())
        .collect();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for k in 0..c {
        let mu: Vec<f64> = (0..d).map(|_| 2.0 * rng.standard_normal()).collect();
        for _ in 0..per_class {
            let e: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            for a in 0..d {
                let mixed: f64 = (0..d).map(|b| mix[a * d + b] * e[b]).sum();
                features.push(mu[a] + e[a] + 0.3 * mixed);
            }
            labels.push(k);
        }
    }
    let names = (0..c).map(|k| format!("class {k}")).collect();
    FeatureStore::new(1, d, features, labels, Split::Train, names).unwrap()
}

/// Largest elementwise difference relative to the largest magnitude.
pub fn max_rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = a.max_abs().max(b.max_abs()).max(f64::MIN_POSITIVE);
    a.sub(b).max_abs() / scale
}

/// Top-k by sorting every row explicitly; ties rank the lower class first.
pub fn topk_oracle(scores: &Matrix, labels: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for (i, &l) in labels.iter().enumerate() {
        let mut order: Vec<usize> = (0..scores.cols()).collect();
        order.sort_by(|&a, &b| {
            scores[(i, b)]
                .partial_cmp(&scores[(i, a)])
                .unwrap()
                .then(a.cmp(&b))
        });
        if order[..k].contains(&l) {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}

/// mAP from pairwise counts: a sample's rank is the number of samples whose
/// score is higher, or equal with a lower index, plus one.
pub fn map_oracle(scores: &Matrix, labels: &[usize]) -> Option<f64> {
    let (n, c) = scores.shape();
    let mut aps = Vec::new();
    for k in 0..c {
        let ahead = |i: usize, j: usize| {
            scores[(j, k)] > scores[(i, k)] || (scores[(j, k)] == scores[(i, k)] && j < i)
        };
        let positives: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
        if positives.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for &i in &positives {
            let rank = 1 + (0..n).filter(|&j| ahead(i, j)).count();
            let hits = 1 + positives.iter().filter(|&&j| ahead(i, j)).count();
            sum += hits as f64 / rank as f64;
        }
        aps.push(sum / positives.len() as f64);
    }
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Rows drawn from `N(0, I)` and scaled to unit length.
pub fn unit_rows(rows: usize, d: usize, rng: &mut RngState) -> Matrix {
    let mut m = Matrix::zeros(rows, d);
    for r in 0..rows {
        let v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (o, x) in m.row_mut(r).iter_mut().zip(&v) {
            *o = x / n;
        }
    }
    m
}

/// Loss and gradients of the symmetric InfoNCE objective on one batch.
pub struct InfoNceOracle {
    pub loss: f64,
    pub video: Matrix,
    pub text: Matrix,
    pub log_scale: f64,
}

/// Single-process symmetric InfoNCE with scale `exp(log_scale)`, written
/// with explicit softmax matrices.
pub fn infonce_oracle(v: &Matrix, t: &Matrix, log_scale: f64) -> InfoNceOracle {
    let (b, d) = v.shape();
    let s = log_scale.exp();
    let sim = v.matmul_nt(t).unwrap();
    let mut loss = 0.0;
    // dL/dsim accumulated from both directions
    let mut dsim = Matrix::zeros(b, b);
    for dir in 0..2 {
        for r in 0..b {
            let logits: Vec<f64> = (0..b)
                .map(|j| s * if dir == 0 { sim[(r, j)] } else { sim[(j, r)] })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            loss += 0.5 * (z.ln() + mx - logits[r]) / b as f64;
            for j in 0..b {
                let p = (logits[j] - mx).exp() / z;
                let g = 0.5 * (p - if j == r { 1.0 } else { 0.0 }) / b as f64;
                if dir == 0 {
                    dsim[(r, j)] += g;
                } else {
                    dsim[(j, r)] += g;
                }
            }
        }
    }
    let mut video = Matrix::zeros(b, d);
    let mut text = Matrix::zeros(b, d);
    let mut dlog = 0.0;
    for i in 0..b {
        for j in 0..b {
            let g = dsim[(i, j)];
            dlog += g * s * sim[(i, j)];
            for a in 0..d {
                video[(i, a)] += g * s * t[(j, a)];
                text[(j, a)] += g * s * v[(i, a)];
            }
        }
    }
    InfoNceOracle {
        loss,
        video,
        text,
        log_scale: dlog,
    }
}
