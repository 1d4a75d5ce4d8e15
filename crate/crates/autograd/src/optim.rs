use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("optimizer state has {got} moment tensors, store has {want} parameters")]
    Arity { got: usize, want: usize },
    #[error("moment shape {got:?} does not match parameter {name} of shape {want:?}")]
    Shape { name: String, got: Vec<usize>, want: Vec<usize> },
}

/// Adam with bias correction. The learning rate is supplied per step so a
/// schedule can live outside the optimiser.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self { beta1, beta2, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Rebuild from saved moments; shapes are checked against `store`.
    pub fn from_state(
        store: &ParamStore,
        beta1: f64,
        beta2: f64,
        step: u64,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    ) -> Result<Self, OptimError> {
        for moments in [&m, &v] {
            if moments.len() != store.len() {
                return Err(OptimError::Arity { got: moments.len(), want: store.len() });
            }
            for ((_, name, p), t) in store.iter().zip(moments.iter()) {
                if p.shape() != t.shape() {
                    return Err(OptimError::Shape {
                        name: name.to_string(),
                        got: t.shape().to_vec(),
                        want: p.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Self { beta1, beta2, eps: 1e-8, step, m, v })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Apply one update. Parameters without a gradient keep their value and
    /// moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        assert_eq!(grads.len(), store.len(), "gradient list does not match store");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
