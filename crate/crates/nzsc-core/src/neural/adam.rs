//! Adam with bias correction, plus global-norm gradient clipping.

use super::tape::Scalar;

#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![T::zero(); param_count],
            v: vec![T::zero(); param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        let scale = T::from_f64(self.lr / bias1);
        let denom_scale = T::from_f64(1.0 / bias2.sqrt());
        let eps = T::from_f64(self.eps);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let denom = (self.v[i].sqrt() * denom_scale) + eps;
            params[i] = params[i] - scale * self.m[i] / denom;
        }
    }
}

/// Scale `grad` so its l2 norm is at most `max_norm`; returns the pre-clip
/// norm.
pub fn clip_global_norm<T: Scalar>(grad: &mut [T], max_norm: f64) -> f64 {
    let mut total = 0.0f64;
    for &g in grad.iter() {
        let gf = g.to_f64();
        total += gf * gf;
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for g in grad.iter_mut() {
            *g = *g * scale;
        }
    }
    norm
}
