//! Dense, convolutional and self-attention layers with hand-derived backward passes.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => x.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` in place by the derivative, expressed through the activation output.
    pub fn backward(self, output: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => grad.zip_mut_with(output, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(output, |g, &y| *g *= 1.0 - y * y),
            Activation::Identity => {}
        }
    }
}

fn uniform(rng: &mut Rng, bound: f64) -> f64 {
    rng.random_range(-bound..=bound)
}

/// `y = x · weight + bias`, weight stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Fan-in scaled uniform initialization, `U(-1/√in, 1/√in)` for weights and bias.
    pub fn init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || uniform(rng, bound)),
            bias: Array1::from_shape_simple_fn(fan_out, || uniform(rng, bound)),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient w.r.t. `x`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        self.accumulate(x, dy, grad);
        dy.dot(&self.weight.t())
    }

    /// Parameter gradients only.
    pub fn accumulate(&self, x: ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Linear) {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
    }
}

/// Scaled dot-product self-attention weights. All three map the input width to itself.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

/// Intermediate values of one attention evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Row-stochastic attention matrix, `rows × rows`.
    pub attn: Array2<f64>,
    pub output: Array2<f64>,
}

impl AttentionParams {
    pub fn init(rng: &mut Rng, width: usize) -> Self {
        let bound = 1.0 / (width as f64).sqrt();
        let mut m = || Array2::from_shape_simple_fn((width, width), || uniform(rng, bound));
        AttentionParams {
            w_q: m(),
            w_k: m(),
            w_v: m(),
        }
    }

    pub fn zeros(width: usize) -> Self {
        AttentionParams {
            w_q: Array2::zeros((width, width)),
            w_k: Array2::zeros((width, width)),
            w_v: Array2::zeros((width, width)),
        }
    }

    pub fn width(&self) -> usize {
        self.w_q.nrows()
    }

    /// `Softmax(Q Kᵀ / √rows) V` with `Q, K, V = x W_q, x W_k, x W_v`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<AttentionCache> {
        for (name, w) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v)] {
            if w.nrows() != x.ncols() {
                return Err(Error::shape(
                    format!("self_attention {name}"),
                    format!("{} input columns", w.nrows()),
                    format!("{} columns", x.ncols()),
                ));
            }
        }
        let scale = 1.0 / (x.nrows() as f64).sqrt();
        let q = x.dot(&self.w_q);
        let k = x.dot(&self.w_k);
        let v = x.dot(&self.w_v);
        let mut attn = q.dot(&k.t());
        attn *= scale;
        softmax_rows(&mut attn);
        let output = attn.dot(&v);
        Ok(AttentionCache {
            q,
            k,
            v,
            attn,
            output,
        })
    }

    /// Accumulates weight gradients given the upstream gradient of the output.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        cache: &AttentionCache,
        d_out: ArrayView2<f64>,
        grad: &mut AttentionParams,
    ) {
        let scale = 1.0 / (x.nrows() as f64).sqrt();
        let d_v = cache.attn.t().dot(&d_out);
        let d_attn = d_out.dot(&cache.v.t());
        // softmax Jacobian, row by row: dS = P ∘ (dP − rowsum(dP ∘ P))
        let mut d_scores = d_attn;
        for (mut row, p) in d_scores.outer_iter_mut().zip(cache.attn.outer_iter()) {
            let dot: f64 = row.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
            row.zip_mut_with(&p, |g, &pv| *g = pv * (*g - dot));
        }
        d_scores *= scale;
        let d_q = d_scores.dot(&cache.k);
        let d_k = d_scores.t().dot(&cache.q);
        grad.w_q += &x.t().dot(&d_q);
        grad.w_k += &x.t().dot(&d_k);
        grad.w_v += &x.t().dot(&d_v);
    }
}

/// In-place max-shifted softmax over each row.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// 3×3 (configurable) strided 2-D convolution over feature maps stored
/// position-major: one row per spatial position, one column per channel.
///
/// The weight is stored `(kernel·kernel·in_channels) × out_channels`; patch
/// columns are ordered (ky, kx, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spatial {
    pub h: usize,
    pub w: usize,
}

impl Spatial {
    pub fn positions(self) -> usize {
        self.h * self.w
    }
}

impl Conv2d {
    pub fn init(rng: &mut Rng, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let fan_in = kernel * kernel * in_channels;
        let Linear { weight, bias } = Linear::init(rng, fan_in, out_channels);
        Conv2d {
            weight,
            bias,
            in_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv2d {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
            ..*self
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_size(&self, input: Spatial) -> Spatial {
        let f = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        Spatial {
            h: f(input.h),
            w: f(input.w),
        }
    }

    /// Patch matrix for one input map (`positions × channels`).
    pub fn im2col(&self, input: ArrayView2<f64>, size: Spatial) -> Array2<f64> {
        let out = self.output_size(size);
        let c = self.in_channels;
        let k = self.kernel;
        let mut cols = Array2::zeros((out.positions(), k * k * c));
        for oy in 0..out.h {
            for ox in 0..out.w {
                let row = oy * out.w + ox;
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                    if iy < 0 || iy >= size.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                        if ix < 0 || ix >= size.w as isize {
                            continue;
                        }
                        let src = iy as usize * size.w + ix as usize;
                        let dst = (ky * k + kx) * c;
                        cols.slice_mut(s![row, dst..dst + c]).assign(&input.row(src));
                    }
                }
            }
        }
        cols
    }

    /// Scatters patch gradients back onto an input-shaped gradient map.
    pub fn col2im(&self, d_cols: ArrayView2<f64>, size: Spatial) -> Array2<f64> {
        let out = self.output_size(size);
        let c = self.in_channels;
        let k = self.kernel;
        let mut d_input = Array2::zeros((size.positions(), c));
        for oy in 0..out.h {
            for ox in 0..out.w {
                let row = oy * out.w + ox;
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                    if iy < 0 || iy >= size.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                        if ix < 0 || ix >= size.w as isize {
                            continue;
                        }
                        let dst = iy as usize * size.w + ix as usize;
                        let src = (ky * k + kx) * c;
                        let mut target = d_input.row_mut(dst);
                        target += &d_cols.slice(s![row, src..src + c]);
                    }
                }
            }
        }
        d_input
    }
}
