use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::nnet::{ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr0: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.1 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("need lr0 >= 0 and betas in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(invalid("need eps > 0 and weight_decay >= 0"));
        }
        Ok(())
    }
}

/// First and second moments mirroring the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One AdamW update: decoupled decay theta -= lr*wd*theta, then the
/// bias-corrected moment step. Entries with `trainable[i] == false` are
/// left untouched, moments included.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
    hp: &OptimizerConfig,
    lr: f64,
    trainable: Option<&[bool]>,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) || !params.same_layout(&state.v) {
        return Err(shape("gradient or moment layout differs from parameters"));
    }
    if let Some(mask) = trainable {
        if mask.len() != params.len() {
            return Err(shape(format!("mask of {} for {} parameters", mask.len(), params.len())));
        }
    }
    let active = |i: usize| trainable.map_or(true, |m| m[i]);
    for i in (0..grads.len()).filter(|&i| active(i)) {
        if grads.at(i).iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("diverged: non-finite gradient in {}", grads.param(i).name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (hp.beta1, hp.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    let decay = 1.0 - lr * hp.weight_decay;
    for i in (0..params.len()).filter(|&i| active(i)) {
        let g = grads.at(i);
        let m = state.m.at_mut(i);
        let v = state.v.at_mut(i);
        let p = params.at_mut(i);
        for k in 0..p.len() {
            let gk = g[k].f64();
            let mk = b1 * m[k].f64() + (1.0 - b1) * gk;
            let vk = b2 * v[k].f64() + (1.0 - b2) * gk * gk;
            m[k] = T::of(mk);
            v[k] = T::of(vk);
            let step = lr * (mk / c1) / ((vk / c2).sqrt() + hp.eps);
            p[k] = T::of(p[k].f64() * decay - step);
        }
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|p| p.data.iter()).map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// lr0 * factor^floor(epoch / period_epochs)
    Step { period_epochs: usize, factor: f64 },
    /// Multiply by `factor` after `patience_epochs` consecutive epochs
    /// without a strictly higher monitored value.
    Plateau { patience_epochs: usize, factor: f64 },
}

impl Schedule {
    pub fn step_default() -> Self {
        Self::Step { period_epochs: 5, factor: 0.1 }
    }

    pub fn plateau_default() -> Self {
        Self::Plateau { patience_epochs: 10, factor: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, f) = match *self {
            Schedule::Step { period_epochs, factor } => (period_epochs, factor),
            Schedule::Plateau { patience_epochs, factor } => (patience_epochs, factor),
        };
        if n == 0 || !(factor_ok(f)) {
            return Err(invalid(format!("bad schedule {self:?}")));
        }
        Ok(())
    }
}

fn factor_ok(f: f64) -> bool {
    f > 0.0 && f <= 1.0
}

/// Learning rate for `epoch`, replayed from the monitored values of the
/// epochs before it (`history[k]` belongs to epoch k; `None` never counts
/// as an improvement).
pub fn schedule_lr(schedule: &Schedule, lr0: f64, min_lr: f64, epoch: usize, history: &[Option<f64>]) -> f64 {
    match *schedule {
        Schedule::Step { period_epochs, factor } => {
            (lr0 * factor.powi((epoch / period_epochs.max(1)) as i32)).max(min_lr)
        }
        Schedule::Plateau { patience_epochs, factor } => {
            let mut lr = lr0;
            let mut best = f64::NEG_INFINITY;
            let mut bad = 0;
            for m in history.iter().take(epoch) {
                match m {
                    Some(v) if *v > best => {
                        best = *v;
                        bad = 0;
                    }
                    _ => {
                        bad += 1;
                        if bad >= patience_epochs {
                            lr = (lr * factor).max(min_lr);
                            bad = 0;
                        }
                    }
                }
            }
            lr
        }
    }
}

/// True when the last `patience` epochs brought no strictly lower
/// validation loss than the best before them.
pub fn should_stop(valid_losses: &[Option<f64>], patience: usize) -> bool {
    let mut best = f64::INFINITY;
    let mut bad = 0;
    for l in valid_losses {
        match l {
            Some(v) if *v < best => {
                best = *v;
                bad = 0;
            }
            _ => bad += 1,
        }
    }
    patience > 0 && bad >= patience
}
