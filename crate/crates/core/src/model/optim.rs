use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{GseError, Result};

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.98);
pub const ADAM_EPS: f64 = 1e-8;
pub const FINAL_LR_FRACTION: f64 = 0.05;

/// Tri-stage schedule: linear warm-up from zero, hold, then linear decay to
/// 5% of the peak. `schedule` holds the three phase fractions.
pub fn lr_at(step: usize, total: usize, peak: f64, schedule: [f64; 3]) -> f64 {
    let total = total as f64;
    let s = (step as f64).min(total);
    let warm = schedule[0] * total;
    let hold = schedule[1] * total;
    if s < warm {
        peak * s / warm
    } else if s <= warm + hold {
        peak
    } else {
        let decay = total - warm - hold;
        peak * (1.0 - (1.0 - FINAL_LR_FRACTION) * (s - warm - hold) / decay)
    }
}

/// One bias-corrected Adam update of a flat tensor. `t` is the 1-based step.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) {
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams, betas: (f64, f64), eps: f64) -> Self {
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Update the groups accepted by `trainable`. The others keep both their
/// values and their moment estimates.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<()> {
    for (name, g) in grads.groups() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(GseError::Training(format!(
                "non-finite gradient in {name}[{i}] at update {}",
                state.step + 1
            )));
        }
    }
    state.step += 1;
    let t = state.step;
    let betas = (state.beta1, state.beta2);
    let eps = state.eps;
    let grads = grads.groups();
    let AdamState { m, v, .. } = state;
    for (((name, p), (_, m)), ((_, v), (_, g))) in params
        .groups_mut()
        .into_iter()
        .zip(m.groups_mut())
        .zip(v.groups_mut().into_iter().zip(grads))
    {
        if trainable(&name) {
            adam_update(p, g, m, v, t, lr, betas, eps);
        }
    }
    Ok(())
}
