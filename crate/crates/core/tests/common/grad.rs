//! Randomized gradient-check cases. Each returns the relative error between
//! the analytic gradient and central differences for one instance.

use t4v_core::classifier::{build_learnable_baseline, ClassifierMatrix};
use t4v_core::headnet::{backward, forward, init_params, HeadKind, HeadParams, HeadSpec};
use t4v_core::numkit::{central_difference, gaussian_matrix, relative_error, Matrix, RngState};
use t4v_core::objectives::{
    classify_batch, infonce_gathered, l2_normalize_backward, l2_normalize_rows, Batch, LogitScale,
};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Fresh parameters pushed away from their identity-like initialization so
/// every branch carries signal.
fn random_params(spec: &HeadSpec, rng: &mut RngState) -> HeadParams {
    let mut p = init_params(spec, rng).unwrap();
    for t in &mut p.tensors {
        for v in &mut t.data {
            *v += 0.3 * rng.standard_normal();
        }
    }
    p
}

fn flatten(p: &HeadParams) -> Vec<f64> {
    p.tensors
        .iter()
        .flat_map(|t| t.data.iter().copied())
        .collect()
}

fn unflatten(template: &HeadParams, flat: &[f64]) -> HeadParams {
    let mut p = template.clone();
    let mut off = 0;
    for t in &mut p.tensors {
        let n = t.data.len();
        t.data.copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    p
}

/// Worst of the parameter and input errors of `u · head(x)`.
pub fn head_case(kind: HeadKind, layers: usize, seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let frames = 1 + rng.below(5);
    let dim = [4, 6, 8][rng.below(3)];
    let spec = HeadSpec {
        layers,
        heads: 2,
        kernel: [1, 3, 5][rng.below(3)],
        ..HeadSpec::new(kind, frames, dim)
    };
    let params = random_params(&spec, &mut rng);
    let x = gaussian_matrix(frames, dim, &mut rng).unwrap();
    let u: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
    let objective = |p: &HeadParams, x: &Matrix| -> f64 {
        let z = forward(&spec, p, x).unwrap();
        z.iter().zip(&u).map(|(a, b)| a * b).sum()
    };
    let g = backward(&spec, &params, &x, &u).unwrap();

    let mut worst: f64 = 0.0;
    let flat = flatten(&params);
    if !flat.is_empty() {
        let numeric = central_difference(|f| objective(&unflatten(&params, f), &x), &flat, EPS);
        let analytic: Vec<f64> = g.params.iter().flat_map(|t| t.data.clone()).collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    let numeric = central_difference(
        |f| objective(&params, &Matrix::from_vec(frames, dim, f.to_vec()).unwrap()),
        x.as_slice(),
        EPS,
    );
    worst.max(relative_error(g.input.as_slice(), &numeric))
}

/// Temperature-scaled CE through a trainable classifier, with respect to
/// both the weights and the embeddings.
pub fn classifier_case(seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let (b, d, c) = (1 + rng.below(5), 3 + rng.below(4), 2 + rng.below(2));
    let w = build_learnable_baseline(d, c, &mut rng).unwrap();
    let z = gaussian_matrix(b, d, &mut rng).unwrap();
    let labels: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
    let temperature = 0.5 + rng.uniform() * 3.0;
    let loss = |w: &ClassifierMatrix, z: &Matrix| {
        let batch = Batch {
            video_embeddings: z.clone(),
            labels: labels.clone(),
            paired_text_embeddings: None,
        };
        classify_batch(w, &batch, temperature).unwrap()
    };
    let out = loss(&w, &z);
    let num_w = central_difference(
        |f| {
            let mut w2 = w.clone();
            w2.weights = Matrix::from_vec(c, d, f.to_vec()).unwrap();
            loss(&w2, &z).loss
        },
        w.weights.as_slice(),
        EPS,
    );
    let num_z = central_difference(
        |f| loss(&w, &Matrix::from_vec(b, d, f.to_vec()).unwrap()).loss,
        z.as_slice(),
        EPS,
    );
    let gw = out.grad_weights.as_ref().expect("learnable classifier");
    relative_error(gw.as_slice(), &num_w)
        .max(relative_error(out.grad_embeddings.as_slice(), &num_z))
}

fn unit(m: Matrix) -> Matrix {
    l2_normalize_rows(&m).unwrap().0
}

/// Gathered InfoNCE as a function of unnormalized video and text rows and
/// the log scale, differentiated through the normalization.
pub fn infonce_case(seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let (m, n, d) = (1 + rng.below(3), 1 + rng.below(3), 3 + rng.below(3));
    let rows = m * n;
    let raw_v = gaussian_matrix(rows, d, &mut rng).unwrap();
    let raw_t = gaussian_matrix(rows, d, &mut rng).unwrap();
    let log_scale = rng.uniform() * 2.0;
    let loss = |v: &Matrix, t: &Matrix, s: f64| {
        let batches: Vec<Batch> = (0..m)
            .map(|i| {
                let idx: Vec<usize> = (i * n..(i + 1) * n).collect();
                Batch {
                    video_embeddings: unit(v.select_rows(&idx)),
                    labels: vec![0; n],
                    paired_text_embeddings: Some(unit(t.select_rows(&idx))),
                }
            })
            .collect();
        let scale = LogitScale {
            log_scale: s,
            clamp_max: 100.0,
        };
        infonce_gathered(&batches, &scale).unwrap()
    };
    let g = loss(&raw_v, &raw_t, log_scale).reduced();
    let (nv, norms_v) = l2_normalize_rows(&raw_v).unwrap();
    let (nt, norms_t) = l2_normalize_rows(&raw_t).unwrap();
    let gv = l2_normalize_backward(&nv, &norms_v, &g.video);
    let gt = l2_normalize_backward(&nt, &norms_t, &g.text);

    let num_v = central_difference(
        |f| {
            loss(
                &Matrix::from_vec(rows, d, f.to_vec()).unwrap(),
                &raw_t,
                log_scale,
            )
            .mean_loss()
        },
        raw_v.as_slice(),
        EPS,
    );
    let num_t = central_difference(
        |f| {
            loss(
                &raw_v,
                &Matrix::from_vec(rows, d, f.to_vec()).unwrap(),
                log_scale,
            )
            .mean_loss()
        },
        raw_t.as_slice(),
        EPS,
    );
    let num_s = central_difference(
        |f| loss(&raw_v, &raw_t, f[0]).mean_loss(),
        &[log_scale],
        EPS,
    );
    relative_error(gv.as_slice(), &num_v)
        .max(relative_error(gt.as_slice(), &num_t))
        .max(relative_error(&[g.log_scale], &num_s))
}
