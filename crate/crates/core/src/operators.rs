//! Measurement operators (video SCI, spectral SCI, inpainting), their
//! adjoints, and exact minimizers of
//!
//! ```text
//! ½‖Y − A X‖² + (ρ/2)‖X − (V − U)‖²
//! ```
//!
//! For both SCI operators `AᵀA` is block diagonal with rank-1 blocks (one
//! block per measurement pixel, spanning the entries that land on it), so
//! Sherman–Morrison gives the solution in closed form.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::diffopt::Objective;
use crate::error::{invalid, Result};
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;

pub const DEFAULT_SHIFT_STEP: usize = 2;

/// I.i.d. 0/1 masks with `P(1) = p`, drawn from the `masks` stream of `seed`.
pub fn bernoulli_masks(shape: &[usize], p: f64, seed: u64) -> Result<Tensor> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("mask probability must be in (0, 1), got {p}"));
    }
    let mut rng = stream(seed, "masks");
    Tensor::from_fn(shape, |_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

/// Exactly `round(sr·N)` distinct flat indices, sorted, sampled without
/// replacement.
pub fn sample_observed(shape: &[usize], sr: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&sr) {
        return invalid(format!("sampling rate must be in [0, 1], got {sr}"));
    }
    let n: usize = shape.iter().product();
    let k = (sr * n as f64).round() as usize;
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma`.
pub fn add_gaussian_noise(y: &Tensor, sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    if sigma == 0.0 {
        return Ok(y.clone());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| crate::Error::InvalidArgument(format!("noise level: {e}")))?;
    let data = y.data().iter().map(|v| v + normal.sample(rng)).collect();
    Tensor::from_vec(y.shape(), data)
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        invalid(format!("penalty ρ must be positive, got {rho}"))
    }
}

fn check_shape(t: &Tensor, shape: &[usize], what: &str) -> Result<()> {
    if t.shape() != shape {
        return invalid(format!("{what} has shape {:?}, expected {shape:?}", t.shape()));
    }
    Ok(())
}

pub trait Operator {
    /// Shape of the signal `X`.
    fn signal_shape(&self) -> &[usize];
    fn measurement_shape(&self) -> Vec<usize>;
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, y: &Tensor) -> Result<Tensor>;
    /// `argmin_X ½‖Y − A X‖² + (ρ/2)‖X − (V − U)‖²`.
    fn x_update(&self, v: &Tensor, u: &Tensor, y: &Tensor, rho: f64) -> Result<Tensor>;

    /// `½‖Y − A X‖²`.
    fn fidelity(&self, x: &Tensor, y: &Tensor) -> Result<f64> {
        let r = self.forward(x)?.sub(y)?;
        Ok(0.5 * r.dot(&r)?)
    }
}

/// `½‖Y − A V‖²` as a loss over the flat network output `V`.
pub struct FidelityObjective<'a> {
    pub op: &'a dyn Operator,
    pub y: Tensor,
}

impl Objective for FidelityObjective<'_> {
    fn evaluate(&self, output: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x = Tensor::from_vec(self.op.signal_shape(), output.to_vec())?;
        let r = self.op.forward(&x)?.sub(&self.y)?;
        Ok((0.5 * r.dot(&r)?, self.op.adjoint(&r)?.into_data()))
    }
}

/// Shared closed form for both SCI operators: entry `(i, j, t)` of the
/// signal lands on measurement column `j + step·t`.
fn sci_x_update(masks: &Tensor, step: usize, v: &Tensor, u: &Tensor, y: &Tensor, rho: f64) -> Result<Tensor> {
    check_rho(rho)?;
    let shape = masks.shape();
    check_shape(v, shape, "V")?;
    check_shape(u, shape, "U")?;
    let (n1, n2, n3) = (shape[0], shape[1], shape[2]);
    let w = n2 + step * (n3 - 1);
    check_shape(y, &[n1, w], "Y")?;
    let (m, yd) = (masks.data(), y.data());
    let mut b = vec![0.0; m.len()];
    let mut s = vec![0.0; n1 * w];
    let mut q = vec![0.0; n1 * w];
    for i in 0..n1 {
        for j in 0..n2 {
            for t in 0..n3 {
                let k = (i * n2 + j) * n3 + t;
                let c = i * w + j + step * t;
                let bk = rho * (v.data()[k] - u.data()[k]) + m[k] * yd[c];
                b[k] = bk;
                s[c] += m[k] * bk;
                q[c] += m[k] * m[k];
            }
        }
    }
    let mut x = vec![0.0; m.len()];
    for i in 0..n1 {
        for j in 0..n2 {
            for t in 0..n3 {
                let k = (i * n2 + j) * n3 + t;
                let c = i * w + j + step * t;
                x[k] = b[k] / rho - s[c] / (rho * rho + rho * q[c]) * m[k];
            }
        }
    }
    Tensor::from_vec(shape, x)
}

fn check_masks(masks: &Tensor) -> Result<()> {
    if masks.order() != 3 {
        return invalid("masks must be a (rows, cols, frames) tensor");
    }
    if masks.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return invalid("mask entries must be exactly 0 or 1");
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct VideoSci {
    pub masks: Tensor,
}

impl VideoSci {
    pub fn new(masks: Tensor) -> Result<Self> {
        check_masks(&masks)?;
        Ok(Self { masks })
    }

    /// `(√n₃‖X‖_F + ‖Y‖_F)·√(Σ_t ‖M_t‖_F²)`.
    pub fn fidelity_lipschitz_bound(&self, x: &Tensor, y: &Tensor) -> f64 {
        let n3 = self.masks.shape()[2] as f64;
        (n3.sqrt() * x.norm() + y.norm()) * self.masks.norm()
    }
}

impl Operator for VideoSci {
    fn signal_shape(&self) -> &[usize] {
        self.masks.shape()
    }

    fn measurement_shape(&self) -> Vec<usize> {
        self.masks.shape()[..2].to_vec()
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        SpectralSci::forward_with(&self.masks, 0, x)
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        SpectralSci::adjoint_with(&self.masks, 0, y)
    }

    fn x_update(&self, v: &Tensor, u: &Tensor, y: &Tensor, rho: f64) -> Result<Tensor> {
        sci_x_update(&self.masks, 0, v, u, y, rho)
    }
}

/// Coded aperture with dispersion: band `t` occupies columns
/// `[step·t, step·t + n₂)` of a measurement of width `n₂ + step·(n₃ − 1)`.
#[derive(Debug, Clone)]
pub struct SpectralSci {
    pub masks: Tensor,
    pub step: usize,
}

impl SpectralSci {
    pub fn new(masks: Tensor, step: usize) -> Result<Self> {
        check_masks(&masks)?;
        if step == 0 {
            return invalid("shift step must be positive");
        }
        Ok(Self { masks, step })
    }

    fn forward_with(masks: &Tensor, step: usize, x: &Tensor) -> Result<Tensor> {
        let shape = masks.shape();
        check_shape(x, shape, "X")?;
        let (n1, n2, n3) = (shape[0], shape[1], shape[2]);
        let w = n2 + step * (n3 - 1);
        let mut y = vec![0.0; n1 * w];
        for i in 0..n1 {
            for j in 0..n2 {
                for t in 0..n3 {
                    let k = (i * n2 + j) * n3 + t;
                    y[i * w + j + step * t] += masks.data()[k] * x.data()[k];
                }
            }
        }
        Tensor::from_vec(&[n1, w], y)
    }

    fn adjoint_with(masks: &Tensor, step: usize, y: &Tensor) -> Result<Tensor> {
        let shape = masks.shape();
        let (n1, n2, n3) = (shape[0], shape[1], shape[2]);
        let w = n2 + step * (n3 - 1);
        check_shape(y, &[n1, w], "Y")?;
        Tensor::from_fn(shape, |idx| {
            let (i, j, t) = (idx[0], idx[1], idx[2]);
            masks.data()[(i * n2 + j) * n3 + t] * y.data()[i * w + j + step * t]
        })
    }
}

impl Operator for SpectralSci {
    fn signal_shape(&self) -> &[usize] {
        self.masks.shape()
    }

    fn measurement_shape(&self) -> Vec<usize> {
        let s = self.masks.shape();
        vec![s[0], s[1] + self.step * (s[2] - 1)]
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Self::forward_with(&self.masks, self.step, x)
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        Self::adjoint_with(&self.masks, self.step, y)
    }

    fn x_update(&self, v: &Tensor, u: &Tensor, y: &Tensor, rho: f64) -> Result<Tensor> {
        sci_x_update(&self.masks, self.step, v, u, y, rho)
    }
}

/// Observation of a subset of entries; measurements are the observed
/// values in index order.
#[derive(Debug, Clone)]
pub struct Inpainting {
    shape: Vec<usize>,
    pub observed: Vec<usize>,
}

impl Inpainting {
    pub fn new(shape: &[usize], observed: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if observed.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("observed indices must be strictly increasing");
        }
        if observed.last().is_some_and(|&k| k >= n) {
            return invalid("observed index out of range");
        }
        Ok(Self {
            shape: shape.to_vec(),
            observed,
        })
    }

    pub fn sampling_rate(&self) -> f64 {
        self.observed.len() as f64 / self.shape.iter().product::<usize>() as f64
    }
}

impl Operator for Inpainting {
    fn signal_shape(&self) -> &[usize] {
        &self.shape
    }

    fn measurement_shape(&self) -> Vec<usize> {
        vec![self.observed.len().max(1)]
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_shape(x, &self.shape, "X")?;
        if self.observed.is_empty() {
            return Tensor::zeros(&[1]);
        }
        Tensor::from_vec(
            &[self.observed.len()],
            self.observed.iter().map(|&k| x.data()[k]).collect(),
        )
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        let mut x = Tensor::zeros(&self.shape)?;
        if !self.observed.is_empty() {
            check_shape(y, &[self.observed.len()], "Y")?;
            for (&k, &v) in self.observed.iter().zip(y.data()) {
                x.data_mut()[k] = v;
            }
        }
        Ok(x)
    }

    fn x_update(&self, v: &Tensor, u: &Tensor, y: &Tensor, rho: f64) -> Result<Tensor> {
        check_rho(rho)?;
        check_shape(v, &self.shape, "V")?;
        check_shape(u, &self.shape, "U")?;
        let mut x = v.sub(u)?;
        if !self.observed.is_empty() {
            check_shape(y, &[self.observed.len()], "Y")?;
            for (&k, &yk) in self.observed.iter().zip(y.data()) {
                let w = x.data()[k];
                x.data_mut()[k] = (yk + rho * w) / (1.0 + rho);
            }
        }
        Ok(x)
    }
}
