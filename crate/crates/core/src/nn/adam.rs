use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Adam hyperparameters. `weight_decay` is classic L2 folded into the
/// gradient before the moment updates.
#[derive(Clone, Copy, Debug)]
pub struct AdamCfg {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamCfg {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
    step: usize,
}

/// Adam over a fixed set of named variables.
///
/// Parameters that receive no gradient in a step are skipped and their
/// bias-correction counters do not advance. The full state (moments and
/// counters) round-trips through [`Adam::state_tensors`] / [`Adam::load_state`].
pub struct Adam {
    cfg: AdamCfg,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, cfg: AdamCfg) -> Result<Self> {
        let slots = params
            .into_iter()
            .map(|(name, var)| {
                let m = var.zeros_like()?;
                let v = var.zeros_like()?;
                Ok(Slot { name, var, m, v, step: 0 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, slots })
    }

    pub fn cfg(&self) -> &AdamCfg {
        &self.cfg
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies one update from the given gradient store.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        let c = &self.cfg;
        for slot in &mut self.slots {
            let Some(grad) = grads.get(slot.var.as_tensor()) else { continue };
            let theta = slot.var.as_detached_tensor();
            let grad = if c.weight_decay > 0.0 {
                (grad + (&theta * c.weight_decay)?)?
            } else {
                grad.clone()
            };
            slot.step += 1;
            let t = slot.step as i32;
            slot.m = ((&slot.m * c.beta1)? + (&grad * (1.0 - c.beta1))?)?;
            slot.v = ((&slot.v * c.beta2)? + (grad.sqr()? * (1.0 - c.beta2))?)?;
            let m_hat = (&slot.m / (1.0 - c.beta1.powi(t)))?;
            let v_hat = (&slot.v / (1.0 - c.beta2.powi(t)))?;
            let update = (m_hat * c.lr)?.div(&(v_hat.sqrt()? + c.eps)?)?;
            slot.var.set(&(theta - update)?)?;
        }
        Ok(())
    }

    /// Serializable optimizer state: `{prefix}.{param}.m`, `.v`, `.t`.
    pub fn state_tensors(&self, prefix: &str) -> Result<Vec<(String, Tensor)>> {
        let mut out = Vec::with_capacity(self.slots.len() * 3);
        for slot in &self.slots {
            out.push((format!("{prefix}.{}.m", slot.name), slot.m.clone()));
            out.push((format!("{prefix}.{}.v", slot.name), slot.v.clone()));
            let t = Tensor::from_vec(
                vec![slot.step as f32],
                (1,),
                slot.m.device(),
            )?;
            out.push((format!("{prefix}.{}.t", slot.name), t));
        }
        Ok(out)
    }

    /// Restores moments and counters saved by [`Adam::state_tensors`].
    pub fn load_state(&mut self, prefix: &str, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for slot in &mut self.slots {
            let get = |suffix: &str| -> Result<&Tensor> {
                let key = format!("{prefix}.{}.{suffix}", slot.name);
                tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {key}")))
            };
            slot.m = get("m")?.clone();
            slot.v = get("v")?.clone();
            slot.step = get("t")?.to_vec1::<f32>()?[0] as usize;
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.name.as_str()).collect()
    }
}
