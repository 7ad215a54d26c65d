use alloc::vec::Vec;

use rand::Rng as _;

use super::params::LayerNorm;
use crate::rng::Rng;
use crate::Matrix;

const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

pub(crate) fn gelu_matrix(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    y.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
    y
}

/// `dx = dy ⊙ gelu'(x)`
pub(crate) fn gelu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *d *= gelu_grad(v);
    }
    dx
}

/// Saved state of a row-wise LayerNorm.
#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Matrix, ln: &LayerNorm, eps: f64) -> (Matrix, NormCache) {
    let (rows, cols) = x.shape();
    let mut xhat = Matrix::zeros(rows, cols);
    let mut y = Matrix::zeros(rows, cols);
    let mut rstd = Vec::with_capacity(rows);
    let (gamma, beta) = (ln.gamma.as_slice(), ln.beta.as_slice());
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let s = 1.0 / libm::sqrt(var + eps);
        rstd.push(s);
        let xh = xhat.row_mut(r);
        for c in 0..cols {
            xh[c] = (row[c] - mean) * s;
        }
        let yr = y.row_mut(r);
        for c in 0..cols {
            yr[c] = xhat.get(r, c) * gamma[c] + beta[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(dy: &Matrix, ln: &LayerNorm, cache: &NormCache, grad: &mut LayerNorm) -> Matrix {
    let (rows, cols) = dy.shape();
    let gamma = ln.gamma.as_slice();
    let mut dx = Matrix::zeros(rows, cols);
    let n = cols as f64;
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        {
            let dg = grad.gamma.as_mut_slice();
            for c in 0..cols {
                dg[c] += dyr[c] * xh[c];
            }
        }
        {
            let db = grad.beta.as_mut_slice();
            for c in 0..cols {
                db[c] += dyr[c];
            }
        }
        let mut sum = 0.0;
        let mut sum_x = 0.0;
        for c in 0..cols {
            let d = dyr[c] * gamma[c];
            sum += d;
            sum_x += d * xh[c];
        }
        let s = cache.rstd[r];
        let dxr = dx.row_mut(r);
        for c in 0..cols {
            let d = dyr[c] * gamma[c];
            dxr[c] = s / n * (n * d - sum - xh[c] * sum_x);
        }
    }
    dx
}

/// Inverted dropout. Returns the per-entry multipliers (0 or 1/(1-p)) so
/// the backward pass can reuse them; `None` when nothing was dropped.
pub(crate) fn dropout(x: &mut Matrix, rate: f64, rng: Option<&mut Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f64> =
        (0..x.as_slice().len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
    for (v, s) in x.as_mut_slice().iter_mut().zip(&scale) {
        *v *= s;
    }
    Some(scale)
}

pub(crate) fn dropout_backward(dy: &mut Matrix, scale: &Option<Vec<f64>>) {
    if let Some(scale) = scale {
        for (d, s) in dy.as_mut_slice().iter_mut().zip(scale) {
            *d *= s;
        }
    }
}
