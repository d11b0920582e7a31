use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Adam with bias correction and an L2 penalty folded into the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 0.0,
        }
    }
}

impl Adam {
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Accounting(format!(
                "{} gradient slots for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            let grad = grads.get(id).ok_or_else(|| {
                Error::Accounting(format!("no gradient for parameter {:?}", store.name(id)))
            })?;
            if grad.shape() != store.value(id).shape() {
                return Err(Error::dim("adam_step", store.value(id).shape(), grad.shape()));
            }
        }

        let t = store.step() + 1;
        let bias1 = 1.0 - self.beta1.powf(t as f64);
        let bias2 = 1.0 - self.beta2.powf(t as f64);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let grad = grads.get(id).expect("checked above").data();
            let p = store.param_mut(id);
            let value = p.value.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for k in 0..value.len() {
                let g = grad[k] + self.l2 * value[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                value[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.set_step(t);
        Ok(())
    }
}
