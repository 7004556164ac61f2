//! Adam with bias correction. Parameters are rounded to `f32` after every
//! step so that `f32` checkpoints store them exactly.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Params;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(hyper: AdamHyper, params: &Params) -> Self {
        let zeros = || params.values().iter().map(|p| Array2::zeros(p.dim())).collect();
        Adam {
            hyper,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn apply(&mut self, params: &mut Params, grads: &[Array2<f64>]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("gradient count differs from parameter count".into()));
        }
        self.step += 1;
        let AdamHyper { lr, beta1, beta2, eps } = self.hyper;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.dim(), p.dim())));
            }
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *p = (*p - update) as f32 as f64;
            });
        }
        Ok(())
    }
}
