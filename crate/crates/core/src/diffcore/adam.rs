use std::collections::BTreeMap;

use super::graph::Gradients;
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    /// Decoupled (AdamW-style) decay coefficient.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<R> {
    first: Tensor<R>,
    second: Tensor<R>,
}

/// Adam with decoupled weight decay. Only parameters present in the
/// gradient set are touched, so frozen parameters never move.
#[derive(Clone, Debug)]
pub struct Adam<R = f32> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, Moments<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<R>, grads: &Gradients<R>) -> Result<()> {
        let AdamConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (id, g) in grads.params() {
            let p = store.get_mut(id);
            if p.shape() != g.shape() {
                return Err(Error::contract(format!(
                    "adam: gradient shape {:?} for parameter of shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.moments.entry(id).or_insert_with(|| Moments {
                first: Tensor::zeros(p.shape()),
                second: Tensor::zeros(p.shape()),
            });
            let (m1, m2) = (m.first.data_mut(), m.second.data_mut());
            for (i, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gv = gv.f64();
                let a = beta1 * m1[i].f64() + (1.0 - beta1) * gv;
                let b = beta2 * m2[i].f64() + (1.0 - beta2) * gv * gv;
                m1[i] = R::of(a);
                m2[i] = R::of(b);
                let update = (a / bc1) / ((b / bc2).sqrt() + eps);
                let x = pv.f64();
                *pv = R::of(x - lr * (update + weight_decay * x));
            }
        }
        Ok(())
    }
}
