use std::f64::consts::PI;

use log::warn;

use crate::error::{IqtError, Result};

use super::{Real, Tensor};

/// Moment estimates for ADAM, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments with β1=0.9, β2=0.999, ε=1e-8.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper<'a>(
        params: impl IntoIterator<Item = &'a Tensor<T>>,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One bias-corrected ADAM update applied in place.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(IqtError::Contract(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(IqtError::Contract(format!(
            "adam_step got {} parameters, {} gradients and {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() {
            return Err(IqtError::shape("adam_step", p.shape(), g.shape()));
        }
        if p.shape() != m.shape() {
            return Err(IqtError::shape("adam_step", p.shape(), m.shape()));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64_lossy(state.beta1);
    let b2 = T::from_f64_lossy(state.beta2);
    let one = T::one();
    let bc1 = T::from_f64_lossy(1.0 - state.beta1.powi(t));
    let bc2 = T::from_f64_lossy(1.0 - state.beta2.powi(t));
    let eps = T::from_f64_lossy(state.epsilon);
    let lr = T::from_f64_lossy(lr);

    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, &gj) in m.iter_mut().zip(g) {
            *mj = b1 * *mj + (one - b1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, &gj) in v.iter_mut().zip(g) {
            *vj = b2 * *vj + (one - b2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, &mj), &vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            *pj = *pj - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Half-cosine decay from `lr0` at step 0 down to 0 at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    if step > total_steps {
        warn!("cosine_lr: step {step} past schedule end {total_steps}, clamping to 0");
        return 0.0;
    }
    let progress = step as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (PI * progress).cos())
}
