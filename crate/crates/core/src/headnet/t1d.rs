use crate::numkit::Matrix;
use crate::tensor::Tensor;

use super::HeadSpec;

// kernel layout: [channel][tap], tap j reads frame t + j - k/2

pub(super) fn forward(spec: &HeadSpec, kernel: &Tensor, x: &Matrix) -> Vec<f64> {
    let (t_len, d, k) = (spec.frames, spec.dim, spec.kernel);
    let half = k / 2;
    let mut z = vec![0.0; d];
    for t in 0..t_len {
        for j in 0..k {
            let Some(src) = (t + j).checked_sub(half).filter(|&s| s < t_len) else {
                continue;
            };
            let row = x.row(src);
            for c in 0..d {
                z[c] += kernel.data[c * k + j] * row[c];
            }
        }
    }
    // divide rather than multiply by 1/T so the identity kernel reproduces
    // the temporal mean bit for bit
    let n = t_len as f64;
    z.iter_mut().for_each(|v| *v /= n);
    z
}

pub(super) fn backward(
    spec: &HeadSpec,
    kernel: &Tensor,
    x: &Matrix,
    upstream: &[f64],
) -> (Tensor, Matrix) {
    let (t_len, d, k) = (spec.frames, spec.dim, spec.kernel);
    let half = k / 2;
    let inv = 1.0 / t_len as f64;
    let mut dk = kernel.zeros_like();
    let mut dx = Matrix::zeros(t_len, d);
    for t in 0..t_len {
        for j in 0..k {
            let Some(src) = (t + j).checked_sub(half).filter(|&s| s < t_len) else {
                continue;
            };
            let row = x.row(src);
            for c in 0..d {
                let g = upstream[c] * inv;
                dk.data[c * k + j] += g * row[c];
                dx[(src, c)] += g * kernel.data[c * k + j];
            }
        }
    }
    (dk, dx)
}
