use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::grad::{ParamGrads, ParamId, ParamStore};

use super::OptimizerKind;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Gradient descent, plain or Adam. Both step against the gradient.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        step: u64,
        m: ParamGrads,
        v: ParamGrads,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                step: 0,
                m: ParamGrads::zeros_like(store),
                v: ParamGrads::zeros_like(store),
            },
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.step_masked(store, grads, |_| true);
    }

    /// Updates only the parameters for which `trainable` holds. Adam's step
    /// counter advances once per call.
    pub fn step_masked(&mut self, store: &mut ParamStore, grads: &ParamGrads, trainable: impl Fn(ParamId) -> bool) {
        let ids: Vec<ParamId> = store.ids().filter(|&id| trainable(id)).collect();
        match self {
            Optimizer::Sgd { lr } => {
                for id in ids {
                    let g = grads.get(id).data();
                    for (p, g) in store.get_mut(id).data_mut().iter_mut().zip(g) {
                        *p -= *lr * g;
                    }
                }
            }
            Optimizer::Adam { lr, step, m, v } => {
                *step += 1;
                let c1 = 1.0 - BETA1.powi(*step as i32);
                let c2 = 1.0 - BETA2.powi(*step as i32);
                for id in ids {
                    let g = grads.get(id).data();
                    let m = m.get_mut(id).data_mut();
                    let v = v.get_mut(id).data_mut();
                    let p = store.get_mut(id).data_mut();
                    for i in 0..g.len() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= *lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                }
            }
        }
    }

    /// Writes moment estimates as `adam.m.<name>` / `adam.v.<name>` tensors
    /// and the step count into the metadata.
    pub fn save_state(&self, store: &ParamStore, ck: &mut Checkpoint) {
        if let Optimizer::Adam { step, m, v, .. } = self {
            ck.meta.insert("adam_step".into(), (*step).into());
            for id in store.ids() {
                let name = store.name(id);
                ck.tensors.push((format!("adam.m.{name}"), m.get(id).clone()));
                ck.tensors.push((format!("adam.v.{name}"), v.get(id).clone()));
            }
        }
    }

    pub fn load_state(&mut self, store: &ParamStore, ck: &Checkpoint) -> Result<()> {
        if let Optimizer::Adam { step, m, v, .. } = self {
            *step = ck
                .meta
                .get("adam_step")
                .and_then(|s| s.as_u64())
                .ok_or_else(|| Error::Format("checkpoint has no adam state".into()))?;
            for id in store.ids() {
                let name = store.name(id);
                for (prefix, dst) in [("m", &mut *m), ("v", &mut *v)] {
                    let key = format!("adam.{prefix}.{name}");
                    let t = ck
                        .tensor(&key)
                        .ok_or_else(|| Error::Format(format!("checkpoint is missing {key}")))?;
                    if t.shape() != dst.get(id).shape() {
                        return Err(Error::Format(format!("{key} has the wrong shape")));
                    }
                    *dst.get_mut(id) = t.clone();
                }
            }
        }
        Ok(())
    }
}
