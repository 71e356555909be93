//! Reverse-mode plumbing for the reconstruction network: the stage tape,
//! scalar objectives over the network output, and Adam.

use crate::error::{invalid, Error, Result};
use crate::model::{AffineCache, DecodeCache, EncodeCache};
use crate::params::{ParamKind, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Encode,
    Decode,
    Affine,
    Loss,
}

#[derive(Debug)]
pub(crate) enum Record {
    Encode(EncodeCache),
    Decode(DecodeCache),
    Affine(AffineCache),
    Loss(Vec<f64>),
}

impl Record {
    fn stage(&self) -> Stage {
        match self {
            Record::Encode(_) => Stage::Encode,
            Record::Decode(_) => Stage::Decode,
            Record::Affine(_) => Stage::Affine,
            Record::Loss(_) => Stage::Loss,
        }
    }
}

/// Stages recorded by one forward pass, with the intermediates each needs
/// for its reverse step. The reverse pass pops them in reverse order.
#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.records.iter().map(Record::stage).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub(crate) fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub(crate) fn pop(&mut self, expected: Stage) -> Result<Record> {
        match self.records.pop() {
            Some(r) if r.stage() == expected => Ok(r),
            Some(r) => Err(Error::State(format!(
                "reverse pass expected {expected:?}, found {:?}",
                r.stage()
            ))),
            None => Err(Error::State(format!(
                "reverse pass expected {expected:?} but the tape is empty (no forward pass recorded)"
            ))),
        }
    }

    pub(crate) fn peek(&self) -> Option<Stage> {
        self.records.last().map(Record::stage)
    }
}

/// A scalar loss over the flat network output, returning the value and
/// its gradient with respect to every output entry.
pub trait Objective {
    fn evaluate(&self, output: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Mean squared error over the observed entries of the output.
#[derive(Debug, Clone)]
pub struct MaskedMse {
    pub observed: Vec<usize>,
    pub target: Vec<f64>,
}

impl Objective for MaskedMse {
    fn evaluate(&self, output: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.observed.len() != self.target.len() {
            return invalid("observed index and target lengths differ");
        }
        let m = self.observed.len().max(1) as f64;
        let mut grad = vec![0.0; output.len()];
        let mut loss = 0.0;
        for (&i, &y) in self.observed.iter().zip(&self.target) {
            let r = *output
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("observed index {i} out of range")))?
                - y;
            loss += r * r;
            grad[i] = 2.0 * r / m;
        }
        Ok((loss / m, grad))
    }
}

/// Mean squared error when the output is already the observed subset.
#[derive(Debug, Clone)]
pub struct PointMse {
    pub target: Vec<f64>,
}

impl Objective for PointMse {
    fn evaluate(&self, output: &[f64]) -> Result<(f64, Vec<f64>)> {
        if output.len() != self.target.len() {
            return invalid("output and target lengths differ");
        }
        let m = output.len().max(1) as f64;
        let mut loss = 0.0;
        let grad = output
            .iter()
            .zip(&self.target)
            .map(|(o, y)| {
                let r = o - y;
                loss += r * r;
                2.0 * r / m
            })
            .collect();
        Ok((loss / m, grad))
    }
}

/// Sum of objectives.
pub struct Sum<'a>(pub Vec<Box<dyn Objective + 'a>>);

impl Objective for Sum<'_> {
    fn evaluate(&self, output: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut loss = 0.0;
        let mut grad = vec![0.0; output.len()];
        for o in &self.0 {
            let (l, g) = o.evaluate(output)?;
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr_grid: f64,
    pub lr_other: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_grid: 1e-2,
            lr_other: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_grid > 0.0
            && self.lr_other > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            invalid(format!("invalid Adam settings {self:?}"))
        }
    }
}

/// Bias-corrected Adam over every block of a [`ParamStore`]. Grid blocks
/// use `lr_grid`, the rest `lr_other`; both are multiplied by `lr_scale`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub lr_scale: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            lr_scale: 1.0,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from the accumulated gradients, which are zeroed after.
    /// When every gradient is exactly zero the parameters are left alone;
    /// the moments still decay and the step counter still advances.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        while self.m.len() < store.len() {
            let n = store.block(self.m.len()).value.len();
            self.m.push(vec![0.0; n]);
            self.v.push(vec![0.0; n]);
        }
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let all_zero = store
            .blocks()
            .iter()
            .all(|b| b.grad.iter().all(|&g| g == 0.0));
        for (k, block) in store.blocks_mut().iter_mut().enumerate() {
            if block.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of block '{}'", block.name)));
            }
            let lr = self.lr_scale
                * match block.kind {
                    ParamKind::Grid => self.cfg.lr_grid,
                    _ => self.cfg.lr_other,
                };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..block.value.len() {
                let g = block.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                if !all_zero {
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    block.value[i] -= lr * mh / (vh.sqrt() + self.cfg.eps);
                }
            }
            block.grad.fill(0.0);
        }
        Ok(())
    }
}
