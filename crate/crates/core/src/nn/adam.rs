use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction; moment buffers mirror the parameter store.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.ids().map(|id| ArrayD::zeros(params.get(id).raw_dim())).collect();
        Adam { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) {
        self.t += 1;
        let b1 = T::of(self.cfg.beta1);
        let b2 = T::of(self.cfg.beta2);
        let one = T::one();
        let c1 = one - b1.powi(self.t);
        let c2 = one - b2.powi(self.t);
        let step = T::of(self.cfg.lr) * c2.sqrt() / c1;
        let eps = T::of(self.cfg.eps) * c2.sqrt();
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.0;
            Zip::from(params.get_mut(id))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(grads.get(id))
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps);
                });
        }
    }
}
