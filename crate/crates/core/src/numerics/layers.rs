//! Differentiable building blocks with hand-written backward passes.

use rand::Rng;

use super::Matrix;
use crate::error::Result;

/// Affine map `y = x W + b` applied row-wise. `weight` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Matrix::fan_in_uniform(input, output, input, rng),
            bias: Matrix::fan_in_uniform(1, output, input, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.weight)?.add_row_broadcast(&self.bias)
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: &Matrix, grad_out: &Matrix, grad: &mut Linear) -> Result<Matrix> {
        grad.weight.add_assign(&x.t_matmul(grad_out)?)?;
        grad.bias.add_assign(&grad_out.sum_rows())?;
        grad_out.matmul_t(&self.weight)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row layer normalisation with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Matrix,
    pub bias: Matrix,
}

/// Saved statistics for [`LayerNorm::backward`].
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gain: Matrix::filled(1, dim, 1.0),
            bias: Matrix::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerNormCache)> {
        let d = x.cols() as f64;
        let mut normalized = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = normalized.row_mut(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let out = normalized
            .hadamard_row(&self.gain)
            .add_row_broadcast(&self.bias)?;
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache,
        grad_out: &Matrix,
        grad: &mut LayerNorm,
    ) -> Result<Matrix> {
        grad.gain
            .add_assign(&grad_out.hadamard(&cache.normalized)?.sum_rows())?;
        grad.bias.add_assign(&grad_out.sum_rows())?;

        let dxhat = grad_out.hadamard_row(&self.gain);
        let d = dxhat.cols() as f64;
        let mut dx = Matrix::zeros(dxhat.rows(), dxhat.cols());
        for r in 0..dxhat.rows() {
            let g = dxhat.row(r);
            let xh = cache.normalized.row(r);
            let mean_g = g.iter().sum::<f64>() / d;
            let mean_gx = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            let is = cache.inv_std[r];
            for ((o, &gi), &xi) in dx.row_mut(r).iter_mut().zip(g).zip(xh) {
                *o = is * (gi - mean_g - xi * mean_gx);
            }
        }
        Ok(dx)
    }
}

impl Matrix {
    /// Multiplies every row pointwise by the `1 x cols` matrix `row`.
    pub(crate) fn hadamard_row(&self, row: &Matrix) -> Matrix {
        debug_assert_eq!(row.cols(), self.cols());
        let mut out = self.clone();
        for r in 0..out.rows() {
            for (o, g) in out.row_mut(r).iter_mut().zip(row.data()) {
                *o *= g;
            }
        }
        out
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// How gradients cross the `sign` binarisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignGradient {
    /// Treat `sign` as the identity when backpropagating (training).
    #[default]
    StraightThrough,
    /// Use the true almost-everywhere derivative, zero (gradient checking).
    Exact,
}

impl SignGradient {
    #[inline]
    pub fn passes(self) -> bool {
        matches!(self, SignGradient::StraightThrough)
    }
}

/// `sign` with `sign(0) = +1`, so outputs are always exactly ±1.
#[inline]
pub fn hard_sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}
