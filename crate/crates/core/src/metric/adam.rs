use serde::{Deserialize, Serialize};

use super::nn::{Parameters, Scalar};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment buffers mirroring a parameter set, plus the step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: Parameters<T>>(params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update (β1 = 0.9, β2 = 0.999, ε = 1e-8).
pub fn adam_step<T: Scalar, P: Parameters<T>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    let gs = grads.tensors();
    let mut ps = params.tensors_mut();
    if ps.len() != gs.len() || ps.len() != state.m.len() {
        return Err(Error::invalid("adam: tensor count mismatch"));
    }
    for ((p, g), (m, v)) in ps.iter().zip(&gs).zip(state.m.iter().zip(&state.v)) {
        if p.len() != g.len() || p.len() != m.len() || p.len() != v.len() {
            return Err(Error::DimMismatch {
                expected: p.len(),
                got: g.len(),
            });
        }
    }

    state.t += 1;
    let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
    let one = T::one();
    let bc1 = T::lit(1.0 - BETA1.powi(state.t as i32));
    let bc2 = T::lit(1.0 - BETA2.powi(state.t as i32));
    let lr = T::lit(lr);
    let eps = T::lit(EPSILON);
    for ((p, g), (m, v)) in ps.iter_mut().zip(&gs).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
