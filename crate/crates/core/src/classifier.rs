//! Construction of the class-projection matrix.
//!
//! Four frozen initializations are provided, ordered by how much inter-class
//! correlation they carry: random Gaussian rows, random orthonormal rows,
//! LDA coefficients estimated from pooled visual embeddings, and text
//! embeddings of the class names. A learnable baseline matrix is provided for
//! comparison; it is the only kind trained jointly with the head.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::datastore::FeatureStore;
use crate::error::{Error, Result};
use crate::numkit::{
    cholesky, cholesky_solve, gaussian_matrix, norm, qr_row_orthogonalize, row_norms, Matrix,
    RngState,
};
use crate::tensor::digest_f64;

/// Samples per class used to fit LDA when no cap is given.
pub const DEFAULT_LDA_CAP: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKind {
    RandomNormal,
    RandomOrthogonal,
    Lda,
    Textual,
    LearnableBaseline,
}

impl InitKind {
    pub fn label(self) -> &'static str {
        match self {
            InitKind::RandomNormal => "normal",
            InitKind::RandomOrthogonal => "orthogonal",
            InitKind::Lda => "lda",
            InitKind::Textual => "textual",
            InitKind::LearnableBaseline => "learnable",
        }
    }
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "normal" | "random-normal" => InitKind::RandomNormal,
            "orthogonal" | "random-orthogonal" => InitKind::RandomOrthogonal,
            "lda" => InitKind::Lda,
            "textual" | "text" => InitKind::Textual,
            "learnable" => InitKind::LearnableBaseline,
            other => return Err(Error::Config(format!("unknown classifier kind {other:?}"))),
        })
    }
}

/// `c × d` projection matrix mapping a video embedding to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierMatrix {
    pub weights: Matrix,
    pub init_kind: InitKind,
    pub frozen: bool,
    pub class_names: Vec<String>,
}

impl ClassifierMatrix {
    fn new(weights: Matrix, init_kind: InitKind, frozen: bool) -> Self {
        let class_names = (0..weights.rows()).map(|k| format!("class_{k}")).collect();
        ClassifierMatrix {
            weights,
            init_kind,
            frozen,
            class_names,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.weights.rows() {
            return Err(Error::Manifest(format!(
                "{} class names for {} classifier rows",
                names.len(),
                self.weights.rows()
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    /// Same weights, trainable. Used to start the learnable baseline from any
    /// initialization.
    pub fn unfrozen(mut self) -> Self {
        self.frozen = false;
        self
    }

    /// SHA-256 of the weights' little-endian bytes.
    pub fn digest(&self) -> String {
        digest_f64(self.weights.as_slice())
    }

    /// Keeps the rows of the named classes, in the given order. Every name
    /// must be present.
    pub fn select_classes(&self, names: &[String]) -> Result<ClassifierMatrix> {
        let idx = names
            .iter()
            .map(|n| {
                self.class_names.iter().position(|c| c == n).ok_or_else(|| {
                    Error::Manifest(format!("classifier has no row for class {n:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassifierMatrix {
            weights: self.weights.select_rows(&idx),
            init_kind: self.init_kind,
            frozen: self.frozen,
            class_names: names.to_vec(),
        })
    }
}

fn check_dims(d: usize, c: usize) -> Result<()> {
    if c < 2 || d < c {
        return Err(Error::Dimension(format!(
            "classifier needs d >= c >= 2, got d={d}, c={c}"
        )));
    }
    Ok(())
}

/// Rows drawn i.i.d. from `N(0, I_d)`.
pub fn build_random_normal(d: usize, c: usize, rng: &mut RngState) -> Result<ClassifierMatrix> {
    check_dims(d, c)?;
    Ok(ClassifierMatrix::new(
        gaussian_matrix(c, d, rng)?,
        InitKind::RandomNormal,
        true,
    ))
}

/// First `c` rows of the orthogonal factor of a `d × d` Gaussian matrix.
pub fn build_random_orthogonal(d: usize, c: usize, rng: &mut RngState) -> Result<ClassifierMatrix> {
    if d < c {
        return Err(Error::Dimension(format!(
            "cannot place {c} orthonormal rows in dimension {d}"
        )));
    }
    let u = gaussian_matrix(d, d, rng)?;
    let q = qr_row_orthogonalize(&u)?;
    let rows: Vec<usize> = (0..c).collect();
    Ok(ClassifierMatrix::new(
        q.select_rows(&rows),
        InitKind::RandomOrthogonal,
        true,
    ))
}

/// Learnable baseline: entries `N(0, 1/d)`, not frozen.
pub fn build_learnable_baseline(
    d: usize,
    c: usize,
    rng: &mut RngState,
) -> Result<ClassifierMatrix> {
    check_dims(d, c)?;
    let w = gaussian_matrix(c, d, rng)?.scale(1.0 / (d as f64).sqrt());
    Ok(ClassifierMatrix::new(w, InitKind::LearnableBaseline, false))
}

/// L2-normalized text embeddings of the class names, one row per class.
pub fn build_textual(embeddings: &Matrix, class_names: &[String]) -> Result<ClassifierMatrix> {
    if embeddings.rows() != class_names.len() {
        return Err(Error::Manifest(format!(
            "{} embedding rows for {} class names",
            embeddings.rows(),
            class_names.len()
        )));
    }
    let norms = row_norms(embeddings)?;
    let mut w = embeddings.clone();
    for (i, n) in norms.iter().enumerate() {
        w.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    ClassifierMatrix::new(w, InitKind::Textual, true).with_class_names(class_names.to_vec())
}

/// Result of an LDA fit, including whether the ridge fallback was needed.
#[derive(Debug, Clone)]
pub struct LdaFit {
    pub classifier: ClassifierMatrix,
    /// Ridge added to the within-class covariance, when it was singular.
    pub ridge: Option<f64>,
    pub samples_used: usize,
}

/// Multi-class Fisher LDA coefficients: row `k` is `Σ_w⁻¹ μ_k`.
///
/// Videos are temporal-average pooled first. At most `per_class_cap`
/// samples per class are used, taken in store order. `Σ_w` is the pooled
/// within-class covariance with denominator `n − c`. No intercept is kept.
pub fn build_lda(features: &FeatureStore, per_class_cap: usize) -> Result<ClassifierMatrix> {
    fit_lda(features, per_class_cap).map(|f| f.classifier)
}

pub fn fit_lda(features: &FeatureStore, per_class_cap: usize) -> Result<LdaFit> {
    if per_class_cap < 2 {
        return Err(Error::InsufficientData(format!(
            "per-class cap must be at least 2, got {per_class_cap}"
        )));
    }
    let c = features.num_classes();
    let d = features.dim();
    let groups = features.indices_by_class();
    for (k, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "class {:?} has {} samples, LDA needs at least 2",
                features.class_names()[k],
                g.len()
            )));
        }
    }
    let pooled = features.pooled();
    let mut means = Matrix::zeros(c, d);
    let mut scatter = Matrix::zeros(d, d);
    let mut used = 0;
    for (k, g) in groups.iter().enumerate() {
        let members = &g[..g.len().min(per_class_cap)];
        used += members.len();
        let mut mu = vec![0.0; d];
        for &i in members {
            for (m, v) in mu.iter_mut().zip(pooled.row(i)) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= members.len() as f64);
        for &i in members {
            let dev: Vec<f64> = pooled.row(i).iter().zip(&mu).map(|(x, m)| x - m).collect();
            for a in 0..d {
                if dev[a] == 0.0 {
                    continue;
                }
                for b in 0..d {
                    scatter[(a, b)] += dev[a] * dev[b];
                }
            }
        }
        means.row_mut(k).copy_from_slice(&mu);
    }
    if used <= c {
        return Err(Error::InsufficientData(
            "need more samples than classes to estimate the covariance".into(),
        ));
    }
    let cov = scatter.scale(1.0 / (used - c) as f64);
    let mut ridge = None;
    let chol = match cholesky(&cov) {
        Ok(l) => l,
        Err(_) => {
            let trace: f64 = (0..d).map(|i| cov[(i, i)]).sum();
            let lambda = if trace > 0.0 {
                1e-6 * trace / d as f64
            } else {
                1e-6
            };
            warn!("within-class covariance is singular; adding ridge {lambda:.3e}");
            let mut reg = cov.clone();
            for i in 0..d {
                reg[(i, i)] += lambda;
            }
            ridge = Some(lambda);
            cholesky(&reg)?
        }
    };
    // Σ_w X = Mᵀ, rows of the classifier are the columns of X.
    let coef = cholesky_solve(&chol, &means.transpose()).transpose();
    if !coef.is_finite() {
        return Err(Error::Numeric("LDA coefficients are not finite".into()));
    }
    let classifier = ClassifierMatrix::new(coef, InitKind::Lda, true)
        .with_class_names(features.class_names().to_vec())?;
    Ok(LdaFit {
        classifier,
        ridge,
        samples_used: used,
    })
}

/// Prompt templates and class names to feed an external text encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub templates: Vec<String>,
    pub class_names: Vec<String>,
}

pub const PLACEHOLDER: &str = "{}";

/// Single hard template used when none is given.
pub const DEFAULT_TEMPLATE: &str = "a video of a person {}.";

/// Every template filled with every class name, template-major.
pub fn expand_prompts(p: &PromptSet) -> Result<Vec<String>> {
    for t in &p.templates {
        if t.matches(PLACEHOLDER).count() != 1 {
            return Err(Error::Template(t.clone()));
        }
    }
    Ok(p.templates
        .iter()
        .flat_map(|t| {
            p.class_names
                .iter()
                .map(move |c| t.replacen(PLACEHOLDER, c, 1))
        })
        .collect())
}

/// Upper bound `‖z‖` on any logit of a unit-row classifier; exposed for
/// diagnostics.
pub fn logit_bound(w: &ClassifierMatrix, z: &[f64]) -> f64 {
    let max_row = w.weights.iter_rows().map(norm).fold(0.0, f64::max);
    max_row * norm(z)
}
