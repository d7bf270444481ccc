//! Adam with bias correction, one state per parameter group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(name: impl Into<String>, len: usize) -> Self {
        Self {
            name: name.into(),
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Fails on the first NaN or infinite entry, naming the group.
pub fn check_finite(group: &str, grads: &[f64]) -> Result<()> {
    match grads.iter().position(|g| !g.is_finite()) {
        Some(index) => Err(Error::NonFiniteGradient {
            group: group.to_string(),
            index,
            value: grads[index],
        }),
        None => Ok(()),
    }
}

/// One Adam update of `params` in place. Nothing is modified on error.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam group `{}`: {} params, {} grads, {} moments",
            state.name,
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    check_finite(&state.name, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        // Exact shortcut: untouched parameters with zero moments stay put.
        if g == 0.0 && *m == 0.0 && *v == 0.0 {
            continue;
        }
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}
