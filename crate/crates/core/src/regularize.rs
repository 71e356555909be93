//! Spatial TV and second-order spatial-temporal TV on (rows, cols, frames)
//! tensors, with the smoothed absolute value `√(x² + ε²) − ε`.
//!
//! Differences are taken over the valid region only: `D_x` runs along the
//! row axis, `D_y` along the column axis, `D_z` along frames.

use crate::diffopt::Objective;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SMOOTHING: f64 = 1e-8;
pub const DEFAULT_LAMBDA: f64 = 4e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothL1 {
    pub eps: f64,
}

impl Default for SmoothL1 {
    fn default() -> Self {
        Self {
            eps: DEFAULT_SMOOTHING,
        }
    }
}

impl SmoothL1 {
    pub fn new(eps: f64) -> Result<Self> {
        if eps > 0.0 && eps.is_finite() {
            Ok(Self { eps })
        } else {
            invalid(format!("smoothing constant must be positive, got {eps}"))
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        (x * x + self.eps * self.eps).sqrt() - self.eps
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        x / (x * x + self.eps * self.eps).sqrt()
    }
}

fn dims3(shape: &[usize], min_frames: usize) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return invalid(format!("expected a 3rd-order tensor, got shape {shape:?}"));
    }
    let (n1, n2, n3) = (shape[0], shape[1], shape[2]);
    if n1 < 2 || n2 < 2 {
        return invalid("spatial dimensions must be at least 2");
    }
    if n3 < min_frames {
        return invalid(format!("need at least {min_frames} frames, got {n3}"));
    }
    Ok((n1, n2, n3))
}

/// Smoothed `‖D_x X‖₁ + ‖D_y X‖₁` over a raw row-major buffer, adding
/// `weight·∂/∂X` into `grad` when given.
fn tv_raw(data: &[f64], n: (usize, usize, usize), s: SmoothL1, weight: f64, mut grad: Option<&mut [f64]>) -> f64 {
    let (n1, n2, n3) = n;
    let idx = |i: usize, j: usize, t: usize| (i * n2 + j) * n3 + t;
    let mut total = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            for t in 0..n3 {
                let here = data[idx(i, j, t)];
                if i + 1 < n1 {
                    let d = data[idx(i + 1, j, t)] - here;
                    total += s.value(d);
                    if let Some(g) = grad.as_deref_mut() {
                        let w = weight * s.derivative(d);
                        g[idx(i + 1, j, t)] += w;
                        g[idx(i, j, t)] -= w;
                    }
                }
                if j + 1 < n2 {
                    let d = data[idx(i, j + 1, t)] - here;
                    total += s.value(d);
                    if let Some(g) = grad.as_deref_mut() {
                        let w = weight * s.derivative(d);
                        g[idx(i, j + 1, t)] += w;
                        g[idx(i, j, t)] -= w;
                    }
                }
            }
        }
    }
    total
}

/// Smoothed `‖D_x D_z X‖₁ + ‖D_y D_z X‖₁`.
fn sstv_raw(data: &[f64], n: (usize, usize, usize), s: SmoothL1, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let (n1, n2, n3) = n;
    let m3 = n3 - 1;
    let mut dz = vec![0.0; n1 * n2 * m3];
    for p in 0..n1 * n2 {
        for t in 0..m3 {
            dz[p * m3 + t] = data[p * n3 + t + 1] - data[p * n3 + t];
        }
    }
    match grad {
        None => tv_raw(&dz, (n1, n2, m3), s, weight, None),
        Some(g) => {
            let mut gdz = vec![0.0; dz.len()];
            let v = tv_raw(&dz, (n1, n2, m3), s, weight, Some(&mut gdz));
            for p in 0..n1 * n2 {
                for t in 0..m3 {
                    let w = gdz[p * m3 + t];
                    g[p * n3 + t + 1] += w;
                    g[p * n3 + t] -= w;
                }
            }
            v
        }
    }
}

pub fn tv(x: &Tensor) -> Result<f64> {
    tv_with(x, SmoothL1::default())
}

pub fn tv_with(x: &Tensor, s: SmoothL1) -> Result<f64> {
    let n = dims3(x.shape(), 1)?;
    Ok(tv_raw(x.data(), n, s, 1.0, None))
}

pub fn sstv(x: &Tensor) -> Result<f64> {
    sstv_with(x, SmoothL1::default())
}

pub fn sstv_with(x: &Tensor, s: SmoothL1) -> Result<f64> {
    let n = dims3(x.shape(), 2)?;
    Ok(sstv_raw(x.data(), n, s, 1.0, None))
}

/// `λ₁·tv(X) + λ₂·sstv(X)`.
pub fn reg_loss(x: &Tensor, lambda1: f64, lambda2: f64) -> Result<f64> {
    Regularizer::new(lambda1, lambda2, SmoothL1::default())?.value(x.shape(), x.data())
}

/// Weighted TV + SSTV penalty on a fixed tensor shape; also usable as an
/// [`Objective`] over the flat network output.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularizer {
    pub lambda1: f64,
    pub lambda2: f64,
    pub smooth: SmoothL1,
}

impl Regularizer {
    pub fn new(lambda1: f64, lambda2: f64, smooth: SmoothL1) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
            return invalid(format!(
                "regularization weights must be nonnegative, got {lambda1}, {lambda2}"
            ));
        }
        Ok(Self {
            lambda1,
            lambda2,
            smooth,
        })
    }

    fn check(&self, shape: &[usize], len: usize) -> Result<(usize, usize, usize)> {
        let n = dims3(shape, if self.lambda2 > 0.0 { 2 } else { 1 })?;
        if len != n.0 * n.1 * n.2 {
            return invalid("buffer length does not match the regularizer shape");
        }
        Ok(n)
    }

    pub fn value(&self, shape: &[usize], data: &[f64]) -> Result<f64> {
        let n = self.check(shape, data.len())?;
        let mut v = 0.0;
        if self.lambda1 > 0.0 {
            v += self.lambda1 * tv_raw(data, n, self.smooth, 1.0, None);
        }
        if self.lambda2 > 0.0 {
            v += self.lambda2 * sstv_raw(data, n, self.smooth, 1.0, None);
        }
        Ok(v)
    }

    /// Value, with the gradient added into `grad`.
    pub fn value_and_grad(&self, shape: &[usize], data: &[f64], grad: &mut [f64]) -> Result<(f64, f64)> {
        let n = self.check(shape, data.len())?;
        let mut tv_v = 0.0;
        let mut sstv_v = 0.0;
        if self.lambda1 > 0.0 {
            tv_v = tv_raw(data, n, self.smooth, self.lambda1, Some(grad));
        }
        if self.lambda2 > 0.0 {
            sstv_v = sstv_raw(data, n, self.smooth, self.lambda2, Some(grad));
        }
        Ok((tv_v, sstv_v))
    }
}

/// The regularizer bound to a tensor shape, as an objective.
#[derive(Debug, Clone)]
pub struct RegObjective {
    pub shape: Vec<usize>,
    pub reg: Regularizer,
}

impl Objective for RegObjective {
    fn evaluate(&self, output: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; output.len()];
        let (t, s) = self.reg.value_and_grad(&self.shape, output, &mut grad)?;
        Ok((self.reg.lambda1 * t + self.reg.lambda2 * s, grad))
    }
}
