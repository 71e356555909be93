//! PSNR and SSIM.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) with `C₁ = (0.01·peak)²`,
//! `C₂ = (0.03·peak)²`. Near the border the window is truncated to the
//! in-frame pixels and renormalized. 3rd-order inputs are scored frame by
//! frame (last axis) and averaged; 1st-order inputs are treated as a
//! single-row image.

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

const WINDOW_RADIUS: usize = 5;
const WINDOW_SIGMA: f64 = 1.5;

pub fn mse(x: &Tensor, reference: &Tensor) -> Result<f64> {
    x.same_shape(reference)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// `10·log10(peak² / MSE)`; identical inputs give `+∞`.
pub fn psnr(x: &Tensor, reference: &Tensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return invalid(format!("peak must be positive, got {peak}"));
    }
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

fn frames(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [n] => Ok((1, *n, 1)),
        [a, b] => Ok((*a, *b, 1)),
        [a, b, c] => Ok((*a, *b, *c)),
        s => invalid(format!("SSIM supports 1st to 3rd order tensors, got shape {s:?}")),
    }
}

pub fn ssim(x: &Tensor, reference: &Tensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return invalid(format!("peak must be positive, got {peak}"));
    }
    x.same_shape(reference)?;
    let (n1, n2, n3) = frames(x)?;
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let r = WINDOW_RADIUS as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let (xd, yd) = (x.data(), reference.data());
    let mut total = 0.0;
    for t in 0..n3 {
        let at = |d: &[f64], i: usize, j: usize| d[(i * n2 + j) * n3 + t];
        let mut frame_sum = 0.0;
        for i in 0..n1 {
            for j in 0..n2 {
                let (mut w, mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for (a, ka) in kernel.iter().enumerate() {
                    let ii = i as isize + a as isize - r;
                    if ii < 0 || ii >= n1 as isize {
                        continue;
                    }
                    for (b, kb) in kernel.iter().enumerate() {
                        let jj = j as isize + b as isize - r;
                        if jj < 0 || jj >= n2 as isize {
                            continue;
                        }
                        let k = ka * kb;
                        let (p, q) = (at(xd, ii as usize, jj as usize), at(yd, ii as usize, jj as usize));
                        w += k;
                        mx += k * p;
                        my += k * q;
                        sxx += k * p * p;
                        syy += k * q * q;
                        sxy += k * p * q;
                    }
                }
                let (mx, my) = (mx / w, my / w);
                let vx = sxx / w - mx * mx;
                let vy = syy / w - my * my;
                let cxy = sxy / w - mx * my;
                frame_sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += frame_sum / (n1 * n2) as f64;
    }
    Ok(total / n3 as f64)
}
