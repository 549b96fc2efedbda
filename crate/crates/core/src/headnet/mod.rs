//! Trainable temporal heads: `T × d` frame embeddings in, one `d`-dim video
//! embedding out, with exact analytic gradients.
//!
//! * [`HeadKind::Tap`]: temporal average pooling, no parameters.
//! * [`HeadKind::T1d`]: depthwise 1-D convolution along time (zero padding,
//!   no bias), then the temporal mean.
//! * [`HeadKind::TTrans`]: pre-norm transformer encoder over the `T` frame
//!   tokens with learned positional embeddings, then the temporal mean.

mod t1d;
mod ttrans;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngState};
use crate::tensor::Tensor;

/// Feed-forward width of the transformer head, as a multiple of `d`.
pub const FF_MULT: usize = 4;

/// Standard deviation of transformer projection weights at init.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Tap,
    T1d,
    TTrans,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tap" => Ok(HeadKind::Tap),
            "t1d" => Ok(HeadKind::T1d),
            "ttrans" | "t-trans" => Ok(HeadKind::TTrans),
            other => Err(Error::Config(format!("unknown head kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub frames: usize,
    pub dim: usize,
    /// Transformer depth.
    pub layers: usize,
    /// Attention heads; must divide `dim`.
    pub heads: usize,
    /// Temporal kernel size of the 1-D convolution; odd.
    pub kernel: usize,
}

impl HeadSpec {
    pub fn new(kind: HeadKind, frames: usize, dim: usize) -> Self {
        HeadSpec {
            kind,
            frames,
            dim,
            layers: 1,
            heads: 1,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.dim == 0 {
            return Err(Error::Dimension("head needs T >= 1 and d >= 1".into()));
        }
        match self.kind {
            HeadKind::Tap => {}
            HeadKind::T1d => {
                if self.kernel.is_multiple_of(2) {
                    return Err(Error::Config(format!(
                        "temporal kernel must be odd, got {}",
                        self.kernel
                    )));
                }
            }
            HeadKind::TTrans => {
                if self.layers == 0 {
                    return Err(Error::Config("transformer needs at least one layer".into()));
                }
                if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
                    return Err(Error::Config(format!(
                        "{} attention heads do not divide d={}",
                        self.heads, self.dim
                    )));
                }
            }
        }
        Ok(())
    }

    /// Names and shapes of the trainable tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.dim;
        match self.kind {
            HeadKind::Tap => Vec::new(),
            HeadKind::T1d => vec![("t1d.kernel".into(), vec![d, self.kernel])],
            HeadKind::TTrans => {
                let f = FF_MULT * d;
                let mut out = vec![("pos".to_string(), vec![self.frames, d])];
                for l in 0..self.layers {
                    let p = |s: &str| format!("l{l}.{s}");
                    out.extend([
                        (p("ln1.gamma"), vec![d]),
                        (p("ln1.beta"), vec![d]),
                        (p("attn.wq"), vec![d, d]),
                        (p("attn.bq"), vec![d]),
                        (p("attn.wk"), vec![d, d]),
                        (p("attn.bk"), vec![d]),
                        (p("attn.wv"), vec![d, d]),
                        (p("attn.bv"), vec![d]),
                        (p("attn.wo"), vec![d, d]),
                        (p("attn.bo"), vec![d]),
                        (p("ln2.gamma"), vec![d]),
                        (p("ln2.beta"), vec![d]),
                        (p("ff.w1"), vec![d, f]),
                        (p("ff.b1"), vec![f]),
                        (p("ff.w2"), vec![f, d]),
                        (p("ff.b2"), vec![d]),
                    ]);
                }
                out
            }
        }
    }
}

/// Trainable tensors of a head, in [`HeadSpec::param_shapes`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub tensors: Vec<Tensor>,
}

impl HeadParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Checks names and shapes against `spec`.
    pub fn check(&self, spec: &HeadSpec) -> Result<()> {
        let shapes = spec.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::Dimension(format!(
                "head expects {} tensors, got {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&self.tensors) {
            if &t.name != name
                || &t.shape != shape
                || t.data.len() != shape.iter().product::<usize>()
            {
                return Err(Error::Dimension(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
        }
        Ok(())
    }
}

/// Whether decoupled weight decay applies to a head tensor. Only the
/// transformer's projection matrices decay; gains, biases, positional
/// embeddings and the per-channel temporal kernels do not.
pub fn decays(name: &str) -> bool {
    ["attn.wq", "attn.wk", "attn.wv", "attn.wo", "ff.w1", "ff.w2"]
        .iter()
        .any(|s| name.ends_with(s))
}

/// Gradients of `upstream · forward(...)`, laid out like [`HeadParams`], plus
/// the gradient with respect to the input frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeGradients {
    pub params: Vec<Tensor>,
    pub input: Matrix,
}

/// Activations recorded by a forward pass, sufficient to run the backward
/// pass without recomputation.
#[derive(Debug, Clone)]
pub struct Tape {
    inner: TapeInner,
}

#[derive(Debug, Clone)]
enum TapeInner {
    Tap { frames: usize, dim: usize },
    T1d { input: Matrix },
    TTrans(Box<ttrans::Cache>),
}

fn check_frames(spec: &HeadSpec, frames: &Matrix) -> Result<()> {
    if frames.shape() != (spec.frames, spec.dim) {
        return Err(Error::Dimension(format!(
            "frames are {}x{}, head expects {}x{}",
            frames.rows(),
            frames.cols(),
            spec.frames,
            spec.dim
        )));
    }
    Ok(())
}

pub fn init_params(spec: &HeadSpec, rng: &mut RngState) -> Result<HeadParams> {
    spec.validate()?;
    let tensors = spec
        .param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let mut t = Tensor::zeros(name, &shape);
            if t.name == "t1d.kernel" {
                let k = spec.kernel;
                for c in 0..spec.dim {
                    t.data[c * k + k / 2] = 1.0;
                }
            } else if t.name.ends_with(".gamma") {
                t.data.iter_mut().for_each(|v| *v = 1.0);
            } else if decays(&t.name) {
                t.data
                    .iter_mut()
                    .for_each(|v| *v = INIT_STD * rng.standard_normal());
            }
            t
        })
        .collect();
    Ok(HeadParams { tensors })
}

/// Video embedding for one `T × d` clip.
pub fn forward(spec: &HeadSpec, params: &HeadParams, frames: &Matrix) -> Result<Vec<f64>> {
    forward_with_tape(spec, params, frames).map(|(z, _)| z)
}

pub fn forward_with_tape(
    spec: &HeadSpec,
    params: &HeadParams,
    frames: &Matrix,
) -> Result<(Vec<f64>, Tape)> {
    spec.validate()?;
    params.check(spec)?;
    check_frames(spec, frames)?;
    let (z, inner) = match spec.kind {
        HeadKind::Tap => (
            frames.column_mean(),
            TapeInner::Tap {
                frames: spec.frames,
                dim: spec.dim,
            },
        ),
        HeadKind::T1d => (
            t1d::forward(spec, &params.tensors[0], frames),
            TapeInner::T1d {
                input: frames.clone(),
            },
        ),
        HeadKind::TTrans => {
            let (z, cache) = ttrans::forward(spec, params, frames)?;
            (z, TapeInner::TTrans(Box::new(cache)))
        }
    };
    Ok((z, Tape { inner }))
}

impl Tape {
    pub fn backward(
        &self,
        spec: &HeadSpec,
        params: &HeadParams,
        upstream: &[f64],
    ) -> Result<TapeGradients> {
        if upstream.len() != spec.dim {
            return Err(Error::Dimension(format!(
                "upstream gradient has {} entries, head output has {}",
                upstream.len(),
                spec.dim
            )));
        }
        match &self.inner {
            TapeInner::Tap { frames, dim } => {
                let mut input = Matrix::zeros(*frames, *dim);
                let scale = 1.0 / *frames as f64;
                for t in 0..*frames {
                    for (g, u) in input.row_mut(t).iter_mut().zip(upstream) {
                        *g = u * scale;
                    }
                }
                Ok(TapeGradients {
                    params: Vec::new(),
                    input,
                })
            }
            TapeInner::T1d { input } => {
                let (dk, dx) = t1d::backward(spec, &params.tensors[0], input, upstream);
                Ok(TapeGradients {
                    params: vec![dk],
                    input: dx,
                })
            }
            TapeInner::TTrans(cache) => ttrans::backward(spec, params, cache, upstream),
        }
    }
}

/// Exact gradients of `upstream · forward(spec, params, frames)`.
pub fn backward(
    spec: &HeadSpec,
    params: &HeadParams,
    frames: &Matrix,
    upstream: &[f64],
) -> Result<TapeGradients> {
    let (_, tape) = forward_with_tape(spec, params, frames)?;
    tape.backward(spec, params, upstream)
}
