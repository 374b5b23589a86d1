//! Adam updates over the flat parameter vectors of each convolution.

use super::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates matching a parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T: Real> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![T::ZERO; n], v: vec![T::ZERO; n] }
    }
}

/// In-place Adam step on one parameter slice. `step` is the 1-based global
/// step count used for bias correction.
pub fn adam_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    moments: &mut Moments<T>,
    cfg: &AdamConfig,
    step: u64,
) {
    debug_assert_eq!(params.len(), grads.len());
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
    let corr1 = 1.0 - cfg.beta1.powi(step as i32);
    let corr2 = 1.0 - cfg.beta2.powi(step as i32);
    let lr_t = T::from_f64(cfg.lr * corr2.sqrt() / corr1);
    let eps = T::from_f64(cfg.eps);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
    {
        *m = b1 * *m + one_m_b1 * g;
        *v = b2 * *v + one_m_b2 * g * g;
        *p += -(lr_t * *m / (v.sqrt() + eps));
    }
}
