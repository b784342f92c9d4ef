//! Adam over a [`ParameterStore`], restricted to a set of trainable roles.
//!
//! Moments are kept in `f32` so that the state written to a checkpoint is
//! exactly the state in memory; resuming from a checkpoint replays the same
//! updates.

use crate::entropy::model::{LOG_SCALE_MAX, LOG_SCALE_MIN};
use crate::error::Result;
use crate::params::{Gradients, ParameterStore, Role};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub roles: Vec<Role>,
    pub step: u64,
}

impl Adam {
    pub fn new(roles: &[Role]) -> Self {
        Adam {
            roles: roles.to_vec(),
            step: 0,
        }
    }

    /// Restore the step counter from `opt.step` if present.
    pub fn resume(store: &ParameterStore, roles: &[Role]) -> Self {
        let step = store
            .get("opt.step")
            .and_then(|p| p.values.first().copied())
            .map(|v| v as u64)
            .unwrap_or(0);
        Adam {
            roles: roles.to_vec(),
            step,
        }
    }

    /// Apply one update with learning rate `lr`. Parameters without a
    /// gradient are left untouched.
    pub fn apply(&mut self, store: &mut ParameterStore, grads: &Gradients, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let targets: Vec<usize> = (0..store.len())
            .filter(|&i| self.roles.contains(&store.param(i).role) && grads.get(i).is_some())
            .collect();
        for idx in targets {
            let g = grads.get(idx).expect("filtered on presence").to_vec();
            let name = store.param(idx).name.clone();
            let shape = store.param(idx).shape.clone();
            let n = g.len();
            let mi = match store.index_of(&format!("opt.m.{name}")) {
                Some(i) => i,
                None => store.insert(&format!("opt.m.{name}"), &shape, vec![0.0; n])?,
            };
            let vi = match store.index_of(&format!("opt.v.{name}")) {
                Some(i) => i,
                None => store.insert(&format!("opt.v.{name}"), &shape, vec![0.0; n])?,
            };
            let mut m: Vec<f64> = store.param(mi).to_f64();
            let mut v: Vec<f64> = store.param(vi).to_f64();
            let clamp_scale = name.ends_with(".em.log_scale");
            let p = store.param_mut(idx);
            for j in 0..n {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let upd = lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + EPS);
                let mut w = f64::from(p.values[j]) - upd;
                if clamp_scale {
                    w = w.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX);
                }
                p.values[j] = w as f32;
            }
            store.param_mut(mi).values = m.into_iter().map(|x| x as f32).collect();
            store.param_mut(vi).values = v.into_iter().map(|x| x as f32).collect();
        }
        store.set("opt.step", &[1], vec![self.step as f32])?;
        Ok(())
    }
}
