use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{cholesky, gaussian_matrix, qr_row_orthogonalize, Matrix, RngState};

use super::store::{FeatureStore, Split};

/// Parameters of the correlated-prototype generator.
///
/// Classes are partitioned into groups (think "playing X" labels sharing a
/// verb). Prototypes of classes in the same group have cosine `rho_in`,
/// prototypes in different groups have cosine `rho_out`. Negative `rho_out`
/// is accepted as long as the resulting Gram matrix is positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Group sizes; they sum to the class count.
    pub groups: Vec<usize>,
    pub rho_in: f64,
    pub rho_out: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise_std: f64,
    /// Per-coordinate noise added to the prototypes before they are
    /// renormalized into text embeddings; zero makes text equal prototypes.
    #[serde(default)]
    pub text_noise_std: f64,
    pub frames: usize,
    pub dim: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `classes` split into `groups` near-equal contiguous groups.
    pub fn with_even_groups(classes: usize, groups: usize) -> Self {
        let groups = groups.clamp(1, classes.max(1));
        let sizes = (0..groups)
            .map(|g| classes / groups + usize::from(g < classes % groups))
            .collect();
        SyntheticSpec {
            groups: sizes,
            rho_in: 0.6,
            rho_out: 0.1,
            train_per_class: 40,
            test_per_class: 20,
            noise_std: 0.5,
            text_noise_std: 0.0,
            frames: 8,
            dim: 64,
            seed: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.groups.iter().sum()
    }

    /// Group index of every class.
    pub fn group_of(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, &size)| std::iter::repeat_n(g, size))
            .collect()
    }

    pub fn class_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.classes());
        for (g, &size) in self.groups.iter().enumerate() {
            for k in 0..size {
                names.push(format!("verb{g} object{k}"));
            }
        }
        names
    }

    /// Target prototype Gram matrix.
    pub fn target_gram(&self) -> Matrix {
        let group = self.group_of();
        let c = group.len();
        let mut g = Matrix::identity(c);
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    g[(i, j)] = if group[i] == group[j] {
                        self.rho_in
                    } else {
                        self.rho_out
                    };
                }
            }
        }
        g
    }

    fn validate(&self) -> Result<()> {
        let c = self.classes();
        if c < 2 || self.groups.contains(&0) {
            return Err(Error::Spec(
                "need at least two classes and no empty group".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.rho_in)
            || !(self.rho_out > -1.0 && self.rho_out <= self.rho_in)
        {
            return Err(Error::Spec(format!(
                "require -1 < rho_out <= rho_in < 1 and rho_in >= 0, got rho_in={}, rho_out={}",
                self.rho_in, self.rho_out
            )));
        }
        if self.dim < c {
            return Err(Error::Spec(format!(
                "dimension {} is smaller than class count {c}",
                self.dim
            )));
        }
        if self.frames == 0 || !(self.noise_std >= 0.0) || !(self.text_noise_std >= 0.0) {
            return Err(Error::Spec(
                "need frames >= 1 and non-negative noise levels".into(),
            ));
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: FeatureStore,
    pub test: FeatureStore,
    /// `c × d` unit-norm prototypes.
    pub prototypes: Matrix,
    /// `c × d` unit-norm text embeddings: the prototypes themselves, or
    /// perturbed copies when `text_noise_std > 0`.
    pub text: Matrix,
}

/// Builds prototypes with the requested cosine structure and samples noisy
/// frame sequences around them.
///
/// Prototypes are the rows of `L·Q`, where `L` is the Cholesky factor of the
/// target Gram matrix and `Q` holds `c` random orthonormal rows in `R^d`.
/// Sample frames are `prototype + noise_std · N(0, I)`, rounded to `f32` so
/// the in-memory store equals what lands on disk.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let c = spec.classes();
    let gram = spec.target_gram();
    let chol = cholesky(&gram).map_err(|_| {
        Error::Spec(format!(
            "cosine structure rho_in={}, rho_out={} is not positive definite",
            spec.rho_in, spec.rho_out
        ))
    })?;
    let root = RngState::new(spec.seed);
    let basis = qr_row_orthogonalize(&gaussian_matrix(c, spec.dim, &mut root.fork(0))?)?;
    let prototypes = chol.matmul(&basis)?;

    let names = spec.class_names();
    let train = sample_split(spec, &prototypes, spec.train_per_class, &mut root.fork(1))?
        .with_class_names(names.clone())?
        .with_split(Split::Train);
    let test = sample_split(spec, &prototypes, spec.test_per_class, &mut root.fork(2))?
        .with_class_names(names)?
        .with_split(Split::Test);
    let text = if spec.text_noise_std > 0.0 {
        perturbed_text(&prototypes, spec.text_noise_std, &mut root.fork(3))
    } else {
        prototypes.clone()
    };
    Ok(SyntheticData {
        train,
        test,
        prototypes,
        text,
    })
}

fn perturbed_text(prototypes: &Matrix, std: f64, rng: &mut RngState) -> Matrix {
    let mut text = prototypes.clone();
    for r in 0..text.rows() {
        let row = text.row_mut(r);
        for v in row.iter_mut() {
            *v += std * rng.standard_normal();
        }
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    text
}

fn sample_split(
    spec: &SyntheticSpec,
    prototypes: &Matrix,
    per_class: usize,
    rng: &mut RngState,
) -> Result<FeatureStore> {
    let c = prototypes.rows();
    let (t, d) = (spec.frames, spec.dim);
    let mut features = Vec::with_capacity(c * per_class * t * d);
    let mut labels = Vec::with_capacity(c * per_class);
    for class in 0..c {
        let proto = prototypes.row(class);
        for _ in 0..per_class {
            for _ in 0..t {
                for &p in proto {
                    let v = p + spec.noise_std * rng.standard_normal();
                    features.push(v as f32 as f64);
                }
            }
            labels.push(class);
        }
    }
    let names = (0..c).map(|k| format!("class_{k}")).collect();
    FeatureStore::new(t, d, features, labels, Split::Train, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::cosine_rows;

    #[test]
    fn zero_correlation_gives_orthonormal_prototypes() {
        let mut spec = SyntheticSpec::with_even_groups(4, 2);
        spec.rho_in = 0.0;
        spec.rho_out = 0.0;
        let data = generate_synthetic(&spec).unwrap();
        let g = data.prototypes.matmul_nt(&data.prototypes).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn block_structure_matches_target() {
        let mut spec = SyntheticSpec::with_even_groups(6, 2);
        spec.dim = 16;
        let data = generate_synthetic(&spec).unwrap();
        let cos = cosine_rows(&data.prototypes, &data.prototypes).unwrap();
        let target = spec.target_gram();
        for i in 0..6 {
            for j in 0..6 {
                assert!((cos[(i, j)] - target[(i, j)]).abs() < 0.02);
            }
        }
    }

    #[test]
    fn infeasible_structure_is_a_spec_error() {
        let mut spec = SyntheticSpec::with_even_groups(4, 4);
        spec.rho_in = 0.5;
        spec.rho_out = -0.6;
        assert!(matches!(generate_synthetic(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn counts_and_shapes() {
        let mut spec = SyntheticSpec::with_even_groups(3, 1);
        spec.dim = 8;
        spec.frames = 2;
        spec.train_per_class = 5;
        spec.test_per_class = 2;
        let data = generate_synthetic(&spec).unwrap();
        assert_eq!(data.train.len(), 15);
        assert_eq!(data.test.len(), 6);
        assert_eq!(data.train.class_counts(), vec![5, 5, 5]);
        assert_eq!(data.test.split(), Split::Test);
        assert_eq!(data.text, data.prototypes);
    }

    #[test]
    fn text_noise_keeps_unit_rows_and_moves_them() {
        let mut spec = SyntheticSpec::with_even_groups(4, 2);
        spec.text_noise_std = 0.15;
        let data = generate_synthetic(&spec).unwrap();
        let cos = cosine_rows(&data.text, &data.prototypes).unwrap();
        for k in 0..4 {
            let n: f64 = data.text.row(k).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
            assert!(cos[(k, k)] < 0.95 && cos[(k, k)] > 0.3);
        }
        let mut clean = spec.clone();
        clean.text_noise_std = 0.0;
        assert_eq!(generate_synthetic(&clean).unwrap().train, data.train);
    }
}
