use super::{ParamStore, Real, Tensor};
use crate::error::{dim_err, Result};

/// Adam with bias correction; moments are kept per parameter slot.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn ensure_moments(&mut self, store: &ParamStore<T>) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
    }

    /// One update of every trainable parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.ensure_moments(store);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let step_size = T::from_f64_lossy(lr / bc1);
        let inv_bc2_sqrt = T::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = T::from_f64_lossy(self.eps);
        let one = T::one();
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let g = p.grad.data();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (one - b1) * g[i];
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (one - b2) * g[i] * g[i];
                let denom = vi.sqrt() * inv_bc2_sqrt + eps;
                w[i] -= step_size * m.data()[i] / denom;
            }
        }
    }

    /// First and second moment tensors, aligned with the store's parameters.
    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Restores optimizer state saved from [`Adam::moments`].
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) -> Result<()> {
        if m.len() != v.len() {
            return Err(dim_err!("adam state has {} first and {} second moments", m.len(), v.len()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
