//! SGD with momentum and global-norm clipping.

use crate::autodiff::{Gradients, ParamStore};
use crate::error::{DmtError, Result};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Gradients with a larger global L2 norm are rescaled to this norm.
    pub clip_norm: f64,
    /// The learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            clip_norm: 5.0,
            decay_every: 50,
            decay_factor: 0.5,
        }
    }
}

impl OptimConfig {
    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Clone, Debug)]
pub struct OptimState {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    velocity: Vec<Mat>,
    steps: usize,
    skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    /// Update applied; `norm` is the gradient norm before clipping.
    Applied { norm: f64, clipped: bool },
    /// Non-finite gradient; parameters and momentum untouched.
    Skipped,
}

impl OptimState {
    pub fn new(params: &ParamStore, cfg: &OptimConfig) -> Result<Self> {
        if !(cfg.lr >= 0.0 && cfg.clip_norm > 0.0 && (0.0..1.0).contains(&cfg.momentum)) {
            return Err(crate::error::invalid(
                "need lr >= 0, clip_norm > 0 and momentum in [0, 1)",
            ));
        }
        Ok(Self {
            lr: cfg.lr,
            momentum: cfg.momentum,
            clip_norm: cfg.clip_norm,
            velocity: params.zeros_like(),
            steps: 0,
            skipped: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn velocity(&self) -> &[Mat] {
        &self.velocity
    }
}

/// `v ← μ·v + clip(g)`, `p ← p − lr·v`.
pub fn sgd_step(params: &mut ParamStore, grads: &Gradients, opt: &mut OptimState) -> Result<StepOutcome> {
    if grads.params.len() != params.len() || opt.velocity.len() != params.len() {
        return Err(crate::error::invalid(format!(
            "optimizer state for {} params, gradients for {}, store has {}",
            opt.velocity.len(),
            grads.params.len(),
            params.len()
        )));
    }
    for (g, p) in grads.params.iter().zip(params.values()) {
        if g.shape() != p.shape() {
            return Err(DmtError::Shape {
                op: "sgd_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    if !grads.is_finite() {
        opt.skipped += 1;
        log::warn!("non-finite gradient at step {}; update skipped", opt.steps);
        return Ok(StepOutcome::Skipped);
    }
    let norm = grads.global_norm();
    let clipped = norm > opt.clip_norm;
    let factor = if clipped { opt.clip_norm / norm } else { 1.0 };
    for ((p, v), g) in params.values_mut().iter_mut().zip(&mut opt.velocity).zip(&grads.params) {
        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = opt.momentum * *vv + factor * gv;
            *pv -= opt.lr * *vv;
        }
    }
    opt.steps += 1;
    Ok(StepOutcome::Applied { norm, clipped })
}
