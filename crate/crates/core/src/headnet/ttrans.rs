use crate::error::Result;
use crate::numkit::Matrix;
use crate::tensor::Tensor;

use super::{HeadParams, HeadSpec, TapeGradients};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_A: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone)]
struct LayerNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LayerNormCache,
    a: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    ctx: Matrix,
    ln2: LayerNormCache,
    f: Matrix,
    u: Matrix,
    g: Matrix,
}

#[derive(Debug, Clone)]
pub(super) struct Cache {
    layers: Vec<LayerCache>,
}

/// Tensor indices of one layer within `HeadParams::tensors`.
struct LayerIdx(usize);

impl LayerIdx {
    const LN1_G: usize = 0;
    const LN1_B: usize = 1;
    const WQ: usize = 2;
    const BQ: usize = 3;
    const WK: usize = 4;
    const BK: usize = 5;
    const WV: usize = 6;
    const BV: usize = 7;
    const WO: usize = 8;
    const BO: usize = 9;
    const LN2_G: usize = 10;
    const LN2_B: usize = 11;
    const W1: usize = 12;
    const B1: usize = 13;
    const W2: usize = 14;
    const B2: usize = 15;
    const COUNT: usize = 16;

    fn of(l: usize) -> Self {
        LayerIdx(1 + l * Self::COUNT)
    }

    fn at(&self, off: usize) -> usize {
        self.0 + off
    }
}

/// `x · W + b` with `W` stored `in × out` row-major.
fn linear(x: &Matrix, w: &[f64], b: &[f64]) -> Matrix {
    let out_dim = b.len();
    let mut y = Matrix::zeros(x.rows(), out_dim);
    for r in 0..x.rows() {
        let yr = y.row_mut(r);
        yr.copy_from_slice(b);
        for (i, &xi) in x.row(r).iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * out_dim..(i + 1) * out_dim];
            for (o, wv) in yr.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
    }
    y
}

/// Backward of [`linear`]: accumulates `dW += xᵀ dy`, `db += Σ dy` and
/// returns `dx = dy · Wᵀ`.
fn linear_backward(x: &Matrix, w: &[f64], dy: &Matrix, dw: &mut [f64], db: &mut [f64]) -> Matrix {
    let in_dim = x.cols();
    let out_dim = dy.cols();
    let mut dx = Matrix::zeros(x.rows(), in_dim);
    for r in 0..x.rows() {
        let dyr = dy.row(r);
        for (o, g) in db.iter_mut().zip(dyr) {
            *o += g;
        }
        let xr = x.row(r);
        for i in 0..in_dim {
            let wrow = &w[i * out_dim..(i + 1) * out_dim];
            let dwrow = &mut dw[i * out_dim..(i + 1) * out_dim];
            let xi = xr[i];
            let mut acc = 0.0;
            for ((dwv, &wv), &g) in dwrow.iter_mut().zip(wrow).zip(dyr) {
                *dwv += xi * g;
                acc += wv * g;
            }
            dx[(r, i)] = acc;
        }
    }
    dx
}

fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64]) -> (Matrix, LayerNormCache) {
    let (n, d) = x.shape();
    let mut xhat = Matrix::zeros(n, d);
    let mut y = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[(r, c)] = h;
            y[(r, c)] = gamma[c] * h + beta[c];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    dy: &Matrix,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Matrix {
    let (n, d) = dy.shape();
    let mut dx = Matrix::zeros(n, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let xh = cache.xhat.row(r);
        let g = dy.row(r);
        for c in 0..d {
            dgamma[c] += g[c] * xh[c];
            dbeta[c] += g[c];
            dxhat[c] = g[c] * gamma[c];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[r];
        for c in 0..d {
            dx[(r, c)] = is * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_A * (u + GELU_C * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_A * (u + GELU_C * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_A * (1.0 + 3.0 * GELU_C * u * u)
}

pub(super) fn forward(
    spec: &HeadSpec,
    params: &HeadParams,
    frames: &Matrix,
) -> Result<(Vec<f64>, Cache)> {
    let p = &params.tensors;
    let (t_len, d, heads) = (spec.frames, spec.dim, spec.heads);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut h = frames.clone();
    for (v, pv) in h.as_mut_slice().iter_mut().zip(&p[0].data) {
        *v += pv;
    }
    let mut layers = Vec::with_capacity(spec.layers);
    for l in 0..spec.layers {
        let ix = LayerIdx::of(l);
        let w = |off: usize| -> &[f64] { &p[ix.at(off)].data };

        let (a, ln1) = layer_norm(&h, w(LayerIdx::LN1_G), w(LayerIdx::LN1_B));
        let q = linear(&a, w(LayerIdx::WQ), w(LayerIdx::BQ));
        let k = linear(&a, w(LayerIdx::WK), w(LayerIdx::BK));
        let v = linear(&a, w(LayerIdx::WV), w(LayerIdx::BV));
        let mut ctx = Matrix::zeros(t_len, d);
        let mut probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = hd * dh..(hd + 1) * dh;
            let mut s = Matrix::zeros(t_len, t_len);
            for i in 0..t_len {
                let qi = &q.row(i)[cols.clone()];
                for j in 0..t_len {
                    let kj = &k.row(j)[cols.clone()];
                    s[(i, j)] = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                let row = s.row_mut(i);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for e in row.iter_mut() {
                    *e = (*e - m).exp();
                    total += *e;
                }
                row.iter_mut().for_each(|e| *e /= total);
            }
            for i in 0..t_len {
                for j in 0..t_len {
                    let a_ij = s[(i, j)];
                    let vj = &v.row(j)[cols.clone()];
                    let out = &mut ctx.row_mut(i)[cols.clone()];
                    for (o, vv) in out.iter_mut().zip(vj) {
                        *o += a_ij * vv;
                    }
                }
            }
            probs.push(s);
        }
        let o = linear(&ctx, w(LayerIdx::WO), w(LayerIdx::BO));
        h.add_assign(&o);

        let (f, ln2) = layer_norm(&h, w(LayerIdx::LN2_G), w(LayerIdx::LN2_B));
        let u = linear(&f, w(LayerIdx::W1), w(LayerIdx::B1));
        let g = u.map(gelu);
        let ff = linear(&g, w(LayerIdx::W2), w(LayerIdx::B2));
        h.add_assign(&ff);

        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            f,
            u,
            g,
        });
    }
    Ok((h.column_mean(), Cache { layers }))
}

pub(super) fn backward(
    spec: &HeadSpec,
    params: &HeadParams,
    cache: &Cache,
    upstream: &[f64],
) -> Result<TapeGradients> {
    let p = &params.tensors;
    let (t_len, d, heads) = (spec.frames, spec.dim, spec.heads);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut grads: Vec<Tensor> = p.iter().map(Tensor::zeros_like).collect();

    let mut dhid = Matrix::zeros(t_len, d);
    let inv_t = 1.0 / t_len as f64;
    for t in 0..t_len {
        for (g, u) in dhid.row_mut(t).iter_mut().zip(upstream) {
            *g = u * inv_t;
        }
    }

    for l in (0..spec.layers).rev() {
        let ix = LayerIdx::of(l);
        let lc = &cache.layers[l];
        let w = |off: usize| -> &[f64] { &p[ix.at(off)].data };

        // feed-forward branch: h2 = h1 + gelu(LN2(h1) W1 + b1) W2 + b2
        let (dw2, db2) = two_mut(&mut grads, ix.at(LayerIdx::W2), ix.at(LayerIdx::B2));
        let dg = linear_backward(&lc.g, w(LayerIdx::W2), &dhid, dw2, db2);
        let mut du = dg;
        for (gv, uv) in du.as_mut_slice().iter_mut().zip(lc.u.as_slice()) {
            *gv *= gelu_grad(*uv);
        }
        let (dw1, db1) = two_mut(&mut grads, ix.at(LayerIdx::W1), ix.at(LayerIdx::B1));
        let df = linear_backward(&lc.f, w(LayerIdx::W1), &du, dw1, db1);
        let (dg2, db2n) = two_mut(&mut grads, ix.at(LayerIdx::LN2_G), ix.at(LayerIdx::LN2_B));
        let dh1_ln = layer_norm_backward(&lc.ln2, w(LayerIdx::LN2_G), &df, dg2, db2n);
        dhid.add_assign(&dh1_ln);

        // attention branch: h1 = h + Attn(LN1(h)) Wo + bo
        let (dwo, dbo) = two_mut(&mut grads, ix.at(LayerIdx::WO), ix.at(LayerIdx::BO));
        let dctx = linear_backward(&lc.ctx, w(LayerIdx::WO), &dhid, dwo, dbo);
        let mut dq = Matrix::zeros(t_len, d);
        let mut dk = Matrix::zeros(t_len, d);
        let mut dv = Matrix::zeros(t_len, d);
        for hd in 0..heads {
            let cols = hd * dh..(hd + 1) * dh;
            let a = &lc.probs[hd];
            // dA = dctx_h · V_hᵀ, dV_h = Aᵀ · dctx_h
            let mut da = Matrix::zeros(t_len, t_len);
            for i in 0..t_len {
                let gi = &dctx.row(i)[cols.clone()];
                for j in 0..t_len {
                    let vj = &lc.v.row(j)[cols.clone()];
                    da[(i, j)] = gi.iter().zip(vj).map(|(x, y)| x * y).sum();
                    let a_ij = a[(i, j)];
                    let dvj = &mut dv.row_mut(j)[cols.clone()];
                    for (o, g) in dvj.iter_mut().zip(gi) {
                        *o += a_ij * g;
                    }
                }
            }
            // softmax backward, then the scaled dot product
            for i in 0..t_len {
                let row_dot: f64 = (0..t_len).map(|j| da[(i, j)] * a[(i, j)]).sum();
                for j in 0..t_len {
                    let ds = a[(i, j)] * (da[(i, j)] - row_dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj: Vec<f64> = lc.k.row(j)[cols.clone()].to_vec();
                    let qi: Vec<f64> = lc.q.row(i)[cols.clone()].to_vec();
                    for (o, kv) in dq.row_mut(i)[cols.clone()].iter_mut().zip(&kj) {
                        *o += ds * kv;
                    }
                    for (o, qv) in dk.row_mut(j)[cols.clone()].iter_mut().zip(&qi) {
                        *o += ds * qv;
                    }
                }
            }
        }
        let mut da_in = {
            let (dwq, dbq) = two_mut(&mut grads, ix.at(LayerIdx::WQ), ix.at(LayerIdx::BQ));
            linear_backward(&lc.a, w(LayerIdx::WQ), &dq, dwq, dbq)
        };
        {
            let (dwk, dbk) = two_mut(&mut grads, ix.at(LayerIdx::WK), ix.at(LayerIdx::BK));
            da_in.add_assign(&linear_backward(&lc.a, w(LayerIdx::WK), &dk, dwk, dbk));
        }
        {
            let (dwv, dbv) = two_mut(&mut grads, ix.at(LayerIdx::WV), ix.at(LayerIdx::BV));
            da_in.add_assign(&linear_backward(&lc.a, w(LayerIdx::WV), &dv, dwv, dbv));
        }
        let (dg1, db1n) = two_mut(&mut grads, ix.at(LayerIdx::LN1_G), ix.at(LayerIdx::LN1_B));
        let dh_ln = layer_norm_backward(&lc.ln1, w(LayerIdx::LN1_G), &da_in, dg1, db1n);
        dhid.add_assign(&dh_ln);
    }

    // h0 = frames + pos
    grads[0].data.copy_from_slice(dhid.as_slice());
    Ok(TapeGradients {
        params: grads,
        input: dhid,
    })
}

/// Disjoint mutable access to two gradient buffers, `i < j`.
fn two_mut(grads: &mut [Tensor], i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (lo, hi) = grads.split_at_mut(j);
    (&mut lo[i].data, &mut hi[0].data)
}

#[cfg(test)]
mod tests {
    use super::super::{forward as head_forward, init_params, HeadKind};
    use super::*;
    use crate::numkit::{gaussian_matrix, RngState};

    fn spec(frames: usize) -> HeadSpec {
        let mut s = HeadSpec::new(HeadKind::TTrans, frames, 4);
        s.heads = 2;
        s
    }

    #[test]
    fn zero_weights_reduce_to_tap() {
        let s = spec(3);
        let mut p = init_params(&s, &mut RngState::new(3)).unwrap();
        for t in &mut p.tensors {
            if !t.name.ends_with("gamma") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = gaussian_matrix(3, 4, &mut RngState::new(4)).unwrap();
        let z = head_forward(&s, &p, &x).unwrap();
        for (a, b) in z.iter().zip(x.column_mean()) {
            assert!((a - b).abs() < 1e-15);
        }
        // positional embeddings contribute their mean
        p.tensors[0]
            .data
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64);
        let z = head_forward(&s, &p, &x).unwrap();
        let pos_mean = p.tensors[0].to_matrix().column_mean();
        for ((a, b), pm) in z.iter().zip(x.column_mean()).zip(pos_mean) {
            assert!((a - b - pm).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_frame_matches_single_frame() {
        let long = spec(5);
        let short = spec(1);
        let p_long = init_params(&long, &mut RngState::new(8)).unwrap();
        let mut p_short = p_long.clone();
        p_short.tensors[0] = Tensor::zeros("pos", &[1, 4]);
        let frame = [0.3, -1.2, 0.8, 2.0];
        let x_long = Matrix::from_rows(&[frame; 5]).unwrap();
        let x_short = Matrix::from_rows(&[frame]).unwrap();
        let a = head_forward(&long, &p_long, &x_long).unwrap();
        let b = head_forward(&short, &p_short, &x_short).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &u in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8);
        }
    }
}
