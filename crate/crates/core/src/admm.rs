//! Plug-and-play ADMM with the grid model as the prior:
//!
//! ```text
//! X ← argmin ½‖Y − A X‖² + (ρ/2)‖X − (V − U)‖²      (closed form)
//! Θ ← Adam steps on (ρ/2)‖V_Θ − (X + U)‖² + λ₁TV(V_Θ) + λ₂SSTV(V_Θ)
//! U ← U + X − V
//! ρ ← κρ
//! ```
//!
//! Θ is warm-started across outer iterations.

use std::fmt::Write as _;

use crate::diffopt::{Adam, AdamConfig, Objective, Tape};
use crate::error::{invalid, Error, Result};
use crate::metrics::psnr;
use crate::model::GridTdModel;
use crate::operators::Operator;
use crate::params::ParamStore;
use crate::regularize::{Regularizer, SmoothL1, DEFAULT_LAMBDA};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub outer_iters: usize,
    pub inner_steps: usize,
    pub rho0: f64,
    pub kappa: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub smoothing: f64,
    /// Stop once `‖X − V‖_F < 1e-4·‖X‖_F`.
    pub early_stop: bool,
    pub adam: AdamConfig,
    /// Adam step sizes are scaled by `lr_decay^k` in outer iteration `k`.
    pub lr_decay: f64,
    /// Peak value used for the PSNR column when a reference is given.
    pub peak: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            outer_iters: 100,
            inner_steps: 50,
            rho0: 1e-2,
            kappa: 1.1,
            lambda1: 5.0 * DEFAULT_LAMBDA,
            lambda2: 3.5 * DEFAULT_LAMBDA,
            smoothing: crate::regularize::DEFAULT_SMOOTHING,
            early_stop: false,
            adam: AdamConfig::default(),
            lr_decay: 1.0,
            peak: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 {
            return invalid("outer iterations must be at least 1");
        }
        if self.inner_steps == 0 {
            return invalid("inner steps must be at least 1");
        }
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return invalid(format!("rho0 must be positive, got {}", self.rho0));
        }
        if !(self.kappa > 1.0 && self.kappa.is_finite()) {
            return invalid(format!("kappa must exceed 1, got {}", self.kappa));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return invalid("lambda1 and lambda2 must be nonnegative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return invalid(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(self.peak > 0.0) {
            return invalid("peak must be positive");
        }
        SmoothL1::new(self.smoothing)?;
        self.adam.validate()
    }
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x: Tensor,
    pub v: Tensor,
    pub u: Tensor,
    pub rho: f64,
    pub kappa: f64,
    pub k: usize,
}

impl AdmmState {
    pub fn zeros(shape: &[usize], rho: f64, kappa: f64) -> Result<Self> {
        Ok(Self {
            x: Tensor::zeros(shape)?,
            v: Tensor::zeros(shape)?,
            u: Tensor::zeros(shape)?,
            rho,
            kappa,
            k: 0,
        })
    }
}

/// `U ← U + X − V`, then `ρ ← κρ`.
pub fn multiplier_update(state: &mut AdmmState) -> Result<()> {
    state.u = state.u.add(&state.x)?.sub(&state.v)?;
    state.rho *= state.kappa;
    Ok(())
}

/// `ρ·‖V_new − (X_new + U_old)‖_F`.
pub fn boundedness_monitor(v_new: &Tensor, x_new: &Tensor, u_old: &Tensor, rho: f64) -> Result<f64> {
    Ok(rho * v_new.sub(&x_new.add(u_old)?)?.norm())
}

/// `(ρ/2)‖V − T‖² + λ₁TV(V) + λ₂SSTV(V)` over the flat model output.
#[derive(Debug, Clone)]
pub struct VObjective {
    pub shape: Vec<usize>,
    pub target: Vec<f64>,
    pub rho: f64,
    pub reg: Regularizer,
}

impl Objective for VObjective {
    fn evaluate(&self, output: &[f64]) -> Result<(f64, Vec<f64>)> {
        if output.len() != self.target.len() {
            return invalid("output and target lengths differ");
        }
        let mut fit = 0.0;
        let mut grad: Vec<f64> = output
            .iter()
            .zip(&self.target)
            .map(|(v, t)| {
                let r = v - t;
                fit += r * r;
                self.rho * r
            })
            .collect();
        let mut loss = 0.5 * self.rho * fit;
        if self.reg.lambda1 > 0.0 || self.reg.lambda2 > 0.0 {
            let (tv, sstv) = self.reg.value_and_grad(&self.shape, output, &mut grad)?;
            loss += self.reg.lambda1 * tv + self.reg.lambda2 * sstv;
        }
        Ok((loss, grad))
    }
}

/// `steps` Adam iterations on `objective`; returns the refreshed model
/// output and the loss at every step (evaluated before that step's update).
pub fn v_subproblem_step(
    model: &GridTdModel,
    store: &mut ParamStore,
    adam: &mut Adam,
    objective: &dyn Objective,
    steps: usize,
) -> Result<(Tensor, Vec<f64>)> {
    if steps == 0 {
        return invalid("inner steps must be at least 1");
    }
    let mut tape = Tape::new();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        store.zero_grads();
        let loss = model.loss_and_grad(store, &mut tape, objective, None)?;
        losses.push(loss);
        adam.step(store)?;
    }
    let v = model.evaluate(store)?;
    if !v.all_finite() {
        return Err(Error::NonFinite("model output after the inner solve".into()));
    }
    Ok((v, losses))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub rho: f64,
    pub fidelity: f64,
    pub tv: f64,
    pub sstv: f64,
    pub primal_residual: f64,
    pub psnr: Option<f64>,
    pub monitor: f64,
    pub dx: f64,
    pub dv: f64,
    pub du: f64,
    pub inner_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct History {
    pub records: Vec<IterationRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,rho,fidelity,tv,sstv,primal_residual,psnr,monitor,dx,dv,du,inner_loss\n");
        for r in &self.records {
            let p = r.psnr.map_or(String::new(), |v| format!("{v:.17e}"));
            let _ = writeln!(
                s,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.k, r.rho, r.fidelity, r.tv, r.sstv, r.primal_residual, p, r.monitor, r.dx, r.dv, r.du, r.inner_loss
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub state: AdmmState,
    pub history: History,
}

/// Runs `cfg.outer_iters` outer iterations from `X = V = U = 0`. With a
/// reference, each record carries the PSNR of `X`.
pub fn admm_run(
    cfg: &SolverConfig,
    op: &dyn Operator,
    y: &Tensor,
    model: &GridTdModel,
    store: &mut ParamStore,
    reference: Option<&Tensor>,
) -> Result<AdmmResult> {
    cfg.validate()?;
    let shape = op.signal_shape().to_vec();
    if model.shape() != shape.as_slice() {
        return invalid(format!(
            "model shape {:?} does not match operator shape {shape:?}",
            model.shape()
        ));
    }
    if let Some(r) = reference {
        if r.shape() != shape.as_slice() {
            return invalid("reference shape does not match the operator");
        }
    }
    let reg = Regularizer::new(cfg.lambda1, cfg.lambda2, SmoothL1::new(cfg.smoothing)?)?;
    let mut adam = Adam::new(cfg.adam.clone())?;
    let mut state = AdmmState::zeros(&shape, cfg.rho0, cfg.kappa)?;
    let mut history = History::default();
    for k in 0..cfg.outer_iters {
        adam.lr_scale = cfg.lr_decay.powi(k as i32);
        let x_new = op.x_update(&state.v, &state.u, y, state.rho)?;
        let target = x_new.add(&state.u)?;
        let objective = VObjective {
            shape: shape.clone(),
            target: target.data().to_vec(),
            rho: state.rho,
            reg: reg.clone(),
        };
        let (v_new, losses) = v_subproblem_step(model, store, &mut adam, &objective, cfg.inner_steps)?;
        let monitor = state.rho * v_new.sub(&target)?.norm();
        let u_new = target.sub(&v_new)?;
        let dx = x_new.sub(&state.x)?.norm();
        let dv = v_new.sub(&state.v)?.norm();
        let du = u_new.sub(&state.u)?.norm();
        let primal = x_new.sub(&v_new)?.norm();
        let (tv, sstv) = if shape.len() == 3 && shape[0] > 1 && shape[1] > 1 {
            let mut scratch = vec![0.0; v_new.len()];
            let r = Regularizer::new(1.0, if shape[2] > 1 { 1.0 } else { 0.0 }, reg.smooth)?;
            r.value_and_grad(&shape, v_new.data(), &mut scratch)?
        } else {
            (0.0, 0.0)
        };
        let fidelity = op.fidelity(&x_new, y)?;
        let p = reference.map(|r| psnr(&x_new, r, cfg.peak)).transpose()?;
        history.records.push(IterationRecord {
            k: k + 1,
            rho: state.rho,
            fidelity,
            tv,
            sstv,
            primal_residual: primal,
            psnr: p,
            monitor,
            dx,
            dv,
            du,
            inner_loss: *losses.last().unwrap(),
        });
        state.x = x_new;
        state.v = v_new;
        state.u = u_new;
        state.rho *= state.kappa;
        state.k = k + 1;
        if !(state.x.all_finite() && state.u.all_finite()) {
            return Err(Error::NonFinite(format!("ADMM iterate at k = {}", k + 1)));
        }
        if cfg.early_stop && primal < 1e-4 * state.x.norm() {
            break;
        }
    }
    Ok(AdmmResult { state, history })
}
