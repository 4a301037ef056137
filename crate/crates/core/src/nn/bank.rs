use candle_core::{DType, Device, Shape, Tensor, Var};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use crate::error::{Error, Result};

/// FNV-1a, used to derive a per-parameter RNG stream from (seed, name) so
/// initialization does not depend on creation order.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    KaimingNormal { fan_in: usize },
    Normal { std: f64 },
    Const(f64),
    Zeros,
    Ones,
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; keeps the dependency set small and the draws reproducible.
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Name-keyed registry of trainable variables.
///
/// Every variable is created exactly once; weight sharing is expressed by
/// handing the same [`Var`] to several layers, never by duplicate names.
pub struct ParamBank {
    seed: u64,
    dtype: DType,
    device: Device,
    vars: IndexMap<String, Var>,
}

impl ParamBank {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self { seed, dtype, device, vars: IndexMap::new() }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        let mut bytes = self.seed.to_le_bytes().to_vec();
        bytes.extend_from_slice(name.as_bytes());
        ChaCha8Rng::seed_from_u64(fnv1a64(&bytes))
    }

    /// Creates a named variable. Duplicate names are an error.
    pub fn var(&mut self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Var> {
        if self.vars.contains_key(name) {
            return Err(Error::state(format!("parameter {name} already exists")));
        }
        let shape: Shape = shape.into();
        let count = shape.elem_count();
        let mut rng = self.rng_for(name);
        let data: Vec<f64> = match init {
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..count).map(|_| sample_normal(&mut rng) * std).collect()
            }
            Init::Normal { std } => (0..count).map(|_| sample_normal(&mut rng) * std).collect(),
            Init::Const(c) => vec![c; count],
            Init::Zeros => vec![0.0; count],
            Init::Ones => vec![1.0; count],
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Registers an externally created variable (e.g. when loading).
    pub fn insert(&mut self, name: &str, var: Var) -> Result<()> {
        if self.vars.contains_key(name) {
            return Err(Error::state(format!("parameter {name} already exists")));
        }
        self.vars.insert(name.to_string(), var);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// All `(name, var)` pairs in creation order.
    pub fn all(&self) -> Vec<(String, Var)> {
        self.vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Parameters whose name starts with any of the given prefixes.
    pub fn subset(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Snapshot of current values, for checkpointing.
    pub fn value_tensors(&self) -> Result<Vec<(String, Tensor)>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_detached_tensor())))
            .collect()
    }

    /// Overwrites variable values from a checkpoint map. Every registered
    /// parameter must be present; extra keys (e.g. optimizer state) are
    /// ignored.
    pub fn load_values(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.vars.iter() {
            let t = tensors.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter {name} in checkpoint"))
            })?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?} in checkpoint, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_order_independent() {
        let dev = Device::Cpu;
        let mut a = ParamBank::new(7, DType::F32, dev.clone());
        let w1 = a.var("w1", (4, 4), Init::Normal { std: 1.0 }).unwrap();
        let w2 = a.var("w2", (4, 4), Init::Normal { std: 1.0 }).unwrap();

        let mut b = ParamBank::new(7, DType::F32, dev);
        // reversed creation order
        let w2b = b.var("w2", (4, 4), Init::Normal { std: 1.0 }).unwrap();
        let w1b = b.var("w1", (4, 4), Init::Normal { std: 1.0 }).unwrap();

        let v = |t: &Var| t.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v(&w1), v(&w1b));
        assert_eq!(v(&w2), v(&w2b));
        assert_ne!(v(&w1), v(&w2));
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut bank = ParamBank::new(0, DType::F32, Device::Cpu);
        bank.var("w", (2,), Init::Zeros).unwrap();
        assert!(bank.var("w", (2,), Init::Zeros).is_err());
    }

    #[test]
    fn subset_filters_by_prefix() {
        let mut bank = ParamBank::new(0, DType::F32, Device::Cpu);
        bank.var("a.w", (2,), Init::Zeros).unwrap();
        bank.var("b.w", (2,), Init::Zeros).unwrap();
        let sub = bank.subset(&["a."]);
        assert_eq!(sub.len(), 1);
        assert_eq!(sub[0].0, "a.w");
    }
}
