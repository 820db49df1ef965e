//! Adam with bias correction.

use crate::error::{contract_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    /// Steps taken so far.
    pub t: u64,
    /// First and second moments, one per parameter in store order.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f32, beta1: f32, beta2: f32) -> Self {
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.shape()).expect("stored shapes are valid")).collect();
        Self {
            lr,
            beta1,
            beta2,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update; `grads[i]` belongs to the `i`-th stored parameter.  The
    /// arithmetic runs in `f64` and rounds once into the stored `f32`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return contract_err(
                "Adam::step",
                format!("{} gradients and {} moments for {} parameters", grads.len(), self.m.len(), store.len()),
            );
        }
        self.t += 1;
        let (b1, b2) = (self.beta1 as f64, self.beta2 as f64);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.lr as f64;
        let ids: Vec<ParamId> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = &grads[i];
            if g.shape() != store.get(id).shape() {
                return contract_err(
                    "Adam::step",
                    format!("gradient {:?} for parameter {} of shape {:?}", g.shape(), store.name(id), store.get(id).shape()),
                );
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k] as f64;
                let mk = b1 * m[k] as f64 + (1.0 - b1) * gk;
                let vk = b2 * v[k] as f64 + (1.0 - b2) * gk * gk;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let update = lr * (mk / c1) / ((vk / c2).sqrt() + EPSILON);
                p[k] = (p[k] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
