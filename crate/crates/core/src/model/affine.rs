//! Per-frame scale/rotation/translation applied to a decoded video by
//! bilinear resampling.
//!
//! Output pixel `(i, j)` of frame `t` samples the input frame at
//!
//! ```text
//! x = s·cosθ·(i − cᵢ) − s·sinθ·(j − cⱼ) + cᵢ + bₓ
//! y = s·sinθ·(i − cᵢ) + s·cosθ·(j − cⱼ) + cⱼ + b_y
//! ```
//!
//! with `s = exp(σ)`, rotation about the frame center `c`, and translations
//! `bₓ = (n₁/4)·tanh(fₓ(H₃(t/n₃)))`, `b_y = (n₂/4)·tanh(f_y(H₃(t/n₃)))`
//! produced by two small MLPs over the temporal axis encoding. Samples
//! outside the frame read zero.

use crate::error::{invalid, Error, Result};
use crate::model::mlp::Mlp;
use crate::params::{BlockId, ParamKind, ParamStore};
use crate::rng::Rng;

pub const INR_HIDDEN: usize = 32;

#[derive(Debug, Clone)]
pub struct AffineAdapter {
    pub rows: usize,
    pub cols: usize,
    pub frames: usize,
    /// Per-frame log-scale `σ`.
    pub log_scale: BlockId,
    pub angle: BlockId,
    pub fx: Mlp,
    pub fy: Mlp,
}

/// Per-frame transform parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub scale: f64,
    pub angle: f64,
    pub bx: f64,
    pub by: f64,
}

/// Cell base and offset along one axis. An exact hit on the last pixel uses
/// the interior cell (`base = n − 2`, `frac = 1`).
#[inline]
fn cell(p: f64, n: usize) -> (isize, f64) {
    let b = p.floor();
    let mut base = b as isize;
    let mut frac = p - b;
    if n >= 2 && base == n as isize - 1 && frac == 0.0 {
        base = n as isize - 2;
        frac = 1.0;
    }
    (base, frac)
}

#[inline]
fn pixel(frame: &[f64], rows: usize, cols: usize, i: isize, j: isize) -> f64 {
    if i >= 0 && j >= 0 && (i as usize) < rows && (j as usize) < cols {
        frame[i as usize * cols + j as usize]
    } else {
        0.0
    }
}

/// Zero-padded bilinear sample of a row-major frame at `(x, y)`; returns
/// the value and its partial derivatives in `x` and `y`.
pub fn bilinear(frame: &[f64], rows: usize, cols: usize, x: f64, y: f64) -> (f64, f64, f64) {
    let (x0, fx) = cell(x, rows);
    let (y0, fy) = cell(y, cols);
    let v00 = pixel(frame, rows, cols, x0, y0);
    let v01 = pixel(frame, rows, cols, x0, y0 + 1);
    let v10 = pixel(frame, rows, cols, x0 + 1, y0);
    let v11 = pixel(frame, rows, cols, x0 + 1, y0 + 1);
    let value = (1.0 - fx) * (1.0 - fy) * v00
        + (1.0 - fx) * fy * v01
        + fx * (1.0 - fy) * v10
        + fx * fy * v11;
    let dx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
    let dy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
    (value, dx, dy)
}

/// Adjoint of [`bilinear`] in the frame values: spreads `g` over the four
/// in-frame corners.
fn bilinear_scatter(grad: &mut [f64], rows: usize, cols: usize, x: f64, y: f64, g: f64) {
    let (x0, fx) = cell(x, rows);
    let (y0, fy) = cell(y, cols);
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for (i, j, w) in corners {
        if i >= 0 && j >= 0 && (i as usize) < rows && (j as usize) < cols {
            grad[i as usize * cols + j as usize] += w * g;
        }
    }
}

#[derive(Debug)]
pub struct AffineCache {
    pub(crate) input: Vec<f64>,
    pub(crate) h3: Vec<f64>,
    pub(crate) pre: [Vec<f64>; 2],
    pub(crate) act: [Vec<f64>; 2],
    pub(crate) poses: Vec<FramePose>,
}

impl AffineAdapter {
    pub fn register(
        store: &mut ParamStore,
        shape: &[usize],
        rank: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if shape.len() != 3 {
            return invalid("the affine adapter needs a 3rd-order (rows, cols, frames) tensor");
        }
        let frames = shape[2];
        Ok(Self {
            rows: shape[0],
            cols: shape[1],
            frames,
            log_scale: store.add("affine.log_scale", &[frames], ParamKind::Affine, vec![0.0; frames])?,
            angle: store.add("affine.angle", &[frames], ParamKind::Affine, vec![0.0; frames])?,
            fx: Mlp::register(store, "affine.fx", rank, INR_HIDDEN, ParamKind::Affine, true, rng)?,
            fy: Mlp::register(store, "affine.fy", rank, INR_HIDDEN, ParamKind::Affine, true, rng)?,
        })
    }

    fn center(&self) -> (f64, f64) {
        ((self.rows as f64 - 1.0) / 2.0, (self.cols as f64 - 1.0) / 2.0)
    }

    #[inline]
    fn source(&self, pose: &FramePose, i: usize, j: usize) -> (f64, f64) {
        let (ci, cj) = self.center();
        let (sin, cos) = pose.angle.sin_cos();
        let (a, b) = (pose.scale * cos, pose.scale * sin);
        let (di, dj) = (i as f64 - ci, j as f64 - cj);
        (a * di - b * dj + ci + pose.bx, b * di + a * dj + cj + pose.by)
    }

    /// Per-frame poses from the current parameters and temporal encodings
    /// `h3` (frames×rank).
    pub fn poses(&self, store: &ParamStore, h3: &[f64]) -> Result<Vec<FramePose>> {
        Ok(self.pose_pass(store, h3)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn pose_pass(
        &self,
        store: &ParamStore,
        h3: &[f64],
    ) -> Result<(Vec<FramePose>, [Vec<f64>; 2], [Vec<f64>; 2])> {
        let (ax, px) = self.fx.forward(store, h3, self.frames)?;
        let (ay, py) = self.fy.forward(store, h3, self.frames)?;
        let (sx, sy) = (self.rows as f64 / 4.0, self.cols as f64 / 4.0);
        let poses = (0..self.frames)
            .map(|t| FramePose {
                scale: store.value(self.log_scale)[t].exp(),
                angle: store.value(self.angle)[t],
                bx: sx * px[t].tanh(),
                by: sy * py[t].tanh(),
            })
            .collect();
        Ok((poses, [px, py], [ax, ay]))
    }

    /// Resamples every frame of `input` (rows×cols×frames, row-major).
    pub fn apply_with_poses(&self, input: &[f64], poses: &[FramePose]) -> Result<Vec<f64>> {
        let (n1, n2, n3) = (self.rows, self.cols, self.frames);
        if input.len() != n1 * n2 * n3 || poses.len() != n3 {
            return invalid("affine input does not match the adapter shape");
        }
        let mut out = vec![0.0; input.len()];
        let mut frame = vec![0.0; n1 * n2];
        for (t, pose) in poses.iter().enumerate() {
            for p in 0..n1 * n2 {
                frame[p] = input[p * n3 + t];
            }
            for i in 0..n1 {
                for j in 0..n2 {
                    let (x, y) = self.source(pose, i, j);
                    if !(x.is_finite() && y.is_finite()) {
                        return Err(Error::NonFinite(format!("affine sample position in frame {t}")));
                    }
                    out[(i * n2 + j) * n3 + t] = bilinear(&frame, n1, n2, x, y).0;
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn forward(&self, store: &ParamStore, input: Vec<f64>, h3: Vec<f64>) -> Result<(Vec<f64>, AffineCache)> {
        let (poses, pre, act) = self.pose_pass(store, &h3)?;
        let out = self.apply_with_poses(&input, &poses)?;
        Ok((
            out,
            AffineCache {
                input,
                h3,
                pre,
                act,
                poses,
            },
        ))
    }

    /// Accumulates adapter gradients; returns `∂/∂input` and `∂/∂h3`.
    pub(crate) fn backward(
        &self,
        store: &mut ParamStore,
        cache: &AffineCache,
        dout: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let (n1, n2, n3) = (self.rows, self.cols, self.frames);
        let (ci, cj) = self.center();
        let mut dinput = vec![0.0; dout.len()];
        let mut frame = vec![0.0; n1 * n2];
        let mut dframe = vec![0.0; n1 * n2];
        let mut dbx = vec![0.0; n3];
        let mut dby = vec![0.0; n3];
        for t in 0..n3 {
            let pose = cache.poses[t];
            for p in 0..n1 * n2 {
                frame[p] = cache.input[p * n3 + t];
            }
            dframe.fill(0.0);
            let (mut ds, mut dth, mut gbx, mut gby) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n1 {
                for j in 0..n2 {
                    let g = dout[(i * n2 + j) * n3 + t];
                    if g == 0.0 {
                        continue;
                    }
                    let (x, y) = self.source(&pose, i, j);
                    let (_, vx, vy) = bilinear(&frame, n1, n2, x, y);
                    bilinear_scatter(&mut dframe, n1, n2, x, y, g);
                    let (gx, gy) = (g * vx, g * vy);
                    let (rx, ry) = (x - ci - pose.bx, y - cj - pose.by);
                    ds += gx * rx + gy * ry;
                    dth += -gx * ry + gy * rx;
                    gbx += gx;
                    gby += gy;
                }
            }
            for p in 0..n1 * n2 {
                dinput[p * n3 + t] = dframe[p];
            }
            store.grad_mut(self.log_scale)[t] += ds;
            store.grad_mut(self.angle)[t] += dth;
            let tx = cache.pre[0][t].tanh();
            let ty = cache.pre[1][t].tanh();
            dbx[t] = gbx * n1 as f64 / 4.0 * (1.0 - tx * tx);
            dby[t] = gby * n2 as f64 / 4.0 * (1.0 - ty * ty);
        }
        let dhx = self.fx.backward(store, &cache.h3, &cache.act[0], &dbx);
        let dhy = self.fy.backward(store, &cache.h3, &cache.act[1], &dby);
        let dh3 = dhx.iter().zip(&dhy).map(|(a, b)| a + b).collect();
        (dinput, dh3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn adapter(shape: [usize; 3]) -> (ParamStore, AffineAdapter) {
        let mut s = ParamStore::new();
        let a = AffineAdapter::register(&mut s, &shape, 4, &mut stream(0, "a")).unwrap();
        (s, a)
    }

    fn video(shape: [usize; 3], seed: u64) -> Vec<f64> {
        use rand::Rng as _;
        let mut rng = stream(seed, "v");
        (0..shape.iter().product::<usize>())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect()
    }

    #[test]
    fn identity_pose_is_exact() {
        let shape = [5, 6, 3];
        let (s, a) = adapter(shape);
        let input = video(shape, 1);
        let h3 = vec![0.01; 12];
        let poses = a.poses(&s, &h3).unwrap();
        assert!(poses.iter().all(|p| p.scale == 1.0 && p.angle == 0.0 && p.bx == 0.0 && p.by == 0.0));
        let out = a.apply_with_poses(&input, &poses).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn unit_translation_shifts_the_interior() {
        let shape = [6, 5, 1];
        let (_, a) = adapter(shape);
        let input = video(shape, 2);
        let pose = FramePose {
            scale: 1.0,
            angle: 0.0,
            bx: 1.0,
            by: 0.0,
        };
        let out = a.apply_with_poses(&input, &[pose]).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(out[i * 5 + j], input[(i + 1) * 5 + j]);
            }
        }
        // The last row samples one pixel past the frame.
        for j in 0..5 {
            assert_eq!(out[5 * 5 + j], 0.0);
        }
    }

    #[test]
    fn quarter_turn_matches_remap_oracle() {
        let shape = [7, 7, 1];
        let (_, a) = adapter(shape);
        let mut input = vec![0.0; 49];
        for i in 2..5 {
            for j in 1..4 {
                input[i * 7 + j] = (i * 7 + j) as f64;
            }
        }
        let pose = FramePose {
            scale: 1.0,
            angle: std::f64::consts::FRAC_PI_2,
            bx: 0.0,
            by: 0.0,
        };
        let out = a.apply_with_poses(&input, &[pose]).unwrap();
        // θ = π/2 maps (i, j) to (3 − (j − 3), 3 + (i − 3)) = (6 − j, i).
        for i in 0..7 {
            for j in 0..7 {
                let want = input[(6 - j) * 7 + i];
                assert!((out[i * 7 + j] - want).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn last_pixel_uses_interior_cell() {
        let frame = [1.0, 2.0, 3.0, 4.0];
        let (v, dx, dy) = bilinear(&frame, 2, 2, 1.0, 1.0);
        assert_eq!(v, 4.0);
        assert_eq!(dx, 2.0);
        assert_eq!(dy, 1.0);
    }

    #[test]
    fn bilinear_partials_match_finite_differences() {
        let frame: Vec<f64> = (0..20).map(|k| ((k * 7) % 11) as f64 * 0.3).collect();
        for &(x, y) in &[(1.3, 2.6), (0.2, 0.7), (3.4, 3.9), (-0.4, 1.5)] {
            let (_, dx, dy) = bilinear(&frame, 4, 5, x, y);
            let h = 1e-6;
            let fdx = (bilinear(&frame, 4, 5, x + h, y).0 - bilinear(&frame, 4, 5, x - h, y).0) / (2.0 * h);
            let fdy = (bilinear(&frame, 4, 5, x, y + h).0 - bilinear(&frame, 4, 5, x, y - h).0) / (2.0 * h);
            assert!((dx - fdx).abs() < 1e-8 && (dy - fdy).abs() < 1e-8);
        }
    }
}
