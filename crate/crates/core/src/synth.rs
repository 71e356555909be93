//! Synthetic scenes: smooth phantoms of order 1 to 3, moving-object videos
//! and low-rank spectral cubes. Values lie in `[0, 1]`
//! with a peak of 1.

use std::f64::consts::PI;

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::rng::stream;
use crate::tensor::{cp_assemble, Tensor};

fn rescale_peak(t: Tensor) -> Tensor {
    let (_, hi) = t.min_max();
    t.map(|v| v / hi)
}

fn rescale_unit(t: Tensor) -> Tensor {
    let (lo, hi) = t.min_max();
    if hi > lo {
        t.map(|v| (v - lo) / (hi - lo))
    } else {
        t.map(|_| 0.5)
    }
}

/// Sum of three sinusoids with random frequencies (1 to 4 periods) and
/// phases, rescaled to `[0, 1]`.
pub fn sinusoids_1d(n: usize, seed: u64) -> Result<Tensor> {
    let mut rng = stream(seed, "scene");
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|k| {
            let freq = rng.random_range(1.0..4.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            (freq, phase, 1.0 / (k + 1) as f64)
        })
        .collect();
    let t = Tensor::from_fn(&[n], |i| {
        let x = i[0] as f64 / n as f64;
        waves.iter().map(|(f, p, a)| a * (2.0 * PI * f * x + p).sin()).sum()
    })?;
    Ok(rescale_unit(t))
}

/// Sum of four Gaussian bumps with widths between 0.1 and 0.3 of the
/// frame, rescaled to `[0, 1]`.
pub fn bumps_2d(n1: usize, n2: usize, seed: u64) -> Result<Tensor> {
    let mut rng = stream(seed, "scene");
    let bumps: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.3),
                rng.random_range(0.5..1.0),
            ]
        })
        .collect();
    let t = Tensor::from_fn(&[n1, n2], |i| {
        let (x, y) = (i[0] as f64 / n1 as f64, i[1] as f64 / n2 as f64);
        bumps
            .iter()
            .map(|[cx, cy, w, a]| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * w * w)).exp())
            .sum()
    })?;
    Ok(rescale_unit(t))
}

/// Rank-`rank` sum of outer products of positive smooth per-axis profiles,
/// scaled to a peak of 1.
pub fn separable_smooth(shape: &[usize], rank: usize, seed: u64) -> Result<Tensor> {
    if rank == 0 {
        return invalid("rank must be at least 1");
    }
    let mut rng = stream(seed, "scene");
    let factors: Vec<Vec<Vec<f64>>> = (0..rank)
        .map(|r| {
            shape
                .iter()
                .map(|&n| {
                    let freq = rng.random_range(0.5..2.0);
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let weight = 1.0 / (r + 1) as f64;
                    (0..n)
                        .map(|i| weight * (1.5 + (2.0 * PI * freq * i as f64 / n as f64 + phase).sin()))
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(rescale_peak(cp_assemble(&factors)?))
}

/// Smooth phantom of the order of `shape`: sinusoids for 1D, bumps for 2D
/// and a rank-2 separable tensor for 3D.
pub fn smooth_phantom(shape: &[usize], seed: u64) -> Result<Tensor> {
    match shape {
        [n] => sinusoids_1d(*n, seed),
        [a, b] => bumps_2d(*a, *b, seed),
        [_, _, _] => separable_smooth(shape, 2, seed),
        _ => invalid(format!("phantoms are defined for orders 1 to 3, got {shape:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape2d {
    Square,
    Disc,
}

/// A moving object on a smooth background.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingScene {
    pub rows: usize,
    pub cols: usize,
    pub frames: usize,
    pub object: Shape2d,
    /// Side length (square) or diameter (disc) in pixels.
    pub size: usize,
    /// Top-left corner of the bounding box in frame 0, as (row, col).
    pub start: (f64, f64),
    /// Displacement per frame, as (row, col).
    pub velocity: (f64, f64),
    pub foreground: f64,
    /// Background ramps linearly from `background.0` at the top-left corner
    /// to `background.1` at the bottom-right corner.
    pub background: (f64, f64),
}

impl MovingScene {
    pub fn square(rows: usize, cols: usize, frames: usize, velocity: (f64, f64)) -> Self {
        Self {
            rows,
            cols,
            frames,
            object: Shape2d::Square,
            size: rows.min(cols) / 4,
            start: (0.0, 0.0),
            velocity,
            foreground: 0.9,
            background: (0.1, 0.4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.frames == 0 || self.size == 0 {
            return invalid("scene dimensions and object size must be positive");
        }
        let vals = [self.foreground, self.background.0, self.background.1];
        if vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("intensities must lie in [0, 1]");
        }
        Ok(())
    }

    /// Whether pixel `(i, j)` of frame `t` is covered by the object.
    pub fn covers(&self, i: usize, j: usize, t: usize) -> bool {
        let r0 = self.start.0 + self.velocity.0 * t as f64;
        let c0 = self.start.1 + self.velocity.1 * t as f64;
        let s = self.size as f64;
        let (y, x) = (i as f64, j as f64);
        match self.object {
            Shape2d::Square => y >= r0 && y < r0 + s && x >= c0 && x < c0 + s,
            Shape2d::Disc => {
                let r = s / 2.0;
                let (cy, cx) = (r0 + r - 0.5, c0 + r - 0.5);
                (y - cy).powi(2) + (x - cx).powi(2) <= r * r
            }
        }
    }

    pub fn render(&self) -> Result<Tensor> {
        self.validate()?;
        let span = (self.rows + self.cols).saturating_sub(2).max(1) as f64;
        let (b0, b1) = self.background;
        Tensor::from_fn(&[self.rows, self.cols, self.frames], |i| {
            if self.covers(i[0], i[1], i[2]) {
                self.foreground
            } else {
                b0 + (b1 - b0) * (i[0] + i[1]) as f64 / span
            }
        })
    }
}

/// Low-rank-plus-smooth spectral cube: `rank` Gaussian abundance maps with
/// smooth spectra, plus a weak smooth trend across bands, scaled to a peak
/// of 1.
pub fn spectral_cube(rows: usize, cols: usize, bands: usize, rank: usize, seed: u64) -> Result<Tensor> {
    if rank == 0 || rows == 0 || cols == 0 || bands == 0 {
        return invalid("spectral cube dimensions and rank must be positive");
    }
    let mut rng = stream(seed, "scene");
    let mut factors = Vec::with_capacity(rank + 1);
    for _ in 0..rank {
        let (cx, cy) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
        let w = rng.random_range(0.15..0.35);
        let peak = rng.random_range(0.0..1.0);
        let width = rng.random_range(0.2..0.5);
        let bump = |n: usize, c: f64| -> Vec<f64> {
            (0..n).map(|i| (-(i as f64 / n as f64 - c).powi(2) / (2.0 * w * w)).exp()).collect()
        };
        let (row, col) = (bump(rows, cx), bump(cols, cy));
        let spec = (0..bands)
            .map(|i| {
                let s = i as f64 / (bands.max(2) - 1) as f64;
                0.2 + (-(s - peak).powi(2) / (2.0 * width * width)).exp()
            })
            .collect();
        factors.push(vec![row, col, spec]);
    }
    let trend = (0..bands).map(|i| i as f64 / bands as f64).collect();
    factors.push(vec![vec![0.1; rows], vec![1.0; cols], trend]);
    Ok(rescale_peak(cp_assemble(&factors)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_square_sits_at_offset_t() {
        let scene = MovingScene::square(32, 32, 8, (1.0, 1.0));
        let v = scene.render().unwrap();
        let s = scene.size;
        for t in 0..8 {
            for i in 0..32 {
                for j in 0..32 {
                    let inside = (t..t + s).contains(&i) && (t..t + s).contains(&j);
                    assert_eq!(v.get(&[i, j, t]) == 0.9, inside, "({i},{j},{t})");
                }
            }
        }
    }

    #[test]
    fn disc_is_round_and_moves() {
        let scene = MovingScene {
            object: Shape2d::Disc,
            size: 8,
            start: (4.0, 4.0),
            velocity: (0.0, 2.0),
            ..MovingScene::square(24, 24, 3, (0.0, 0.0))
        };
        let area = |t| (0..24).flat_map(|i| (0..24).map(move |j| (i, j))).filter(|&(i, j)| scene.covers(i, j, t)).count();
        let a = area(0);
        assert!((a as f64 - PI * 16.0).abs() < 8.0, "{a}");
        assert_eq!(area(1), a);
        assert!(scene.covers(7, 7, 0) && !scene.covers(7, 7, 2) && scene.covers(7, 11, 2));
    }

    #[test]
    fn phantoms_are_deterministic_and_normalized() {
        for shape in [vec![50], vec![12, 9], vec![6, 5, 4]] {
            let a = smooth_phantom(&shape, 3).unwrap();
            assert_eq!(a, smooth_phantom(&shape, 3).unwrap());
            assert_ne!(a, smooth_phantom(&shape, 4).unwrap());
            let (lo, hi) = a.min_max();
            assert!(lo >= 0.0 && hi == 1.0);
        }
        let c = spectral_cube(10, 12, 6, 3, 1).unwrap();
        assert_eq!(c.shape(), &[10, 12, 6]);
        let (lo, hi) = c.min_max();
        assert!(lo > 0.0 && hi == 1.0);
        assert!(smooth_phantom(&[2, 2, 2, 2], 0).is_err());
    }

    #[test]
    fn separable_phantom_has_the_requested_rank() {
        // Unfolding along the first axis of a rank-1 tensor has rank 1: every
        // 2×2 minor vanishes.
        let t = separable_smooth(&[5, 4, 3], 1, 9).unwrap();
        let at = |i: usize, j: usize| t.data()[i * 12 + j];
        for (a, b) in [(0, 1), (2, 4)] {
            for (c, d) in [(0, 5), (3, 11)] {
                assert!((at(a, c) * at(b, d) - at(a, d) * at(b, c)).abs() < 1e-12);
            }
        }
    }
}
