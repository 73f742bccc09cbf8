//! Named learnable parameters.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Parameters keyed by name. Serializes to `{name: {shape, data}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replaces a value, keeping the shape fixed.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        slot.same_shape(&value, "param_set")?;
        *slot = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Adds every parameter of `other`; names must not collide.
    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (k, v) in other.params {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// Parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// In-place `p -= lr * g` for every parameter present in `grads`.
    pub fn sgd_step(&mut self, grads: &BTreeMap<String, Tensor>, lr: f64) {
        for (name, g) in grads {
            if let Some(p) = self.params.get_mut(name) {
                for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv -= lr * gv;
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Parameters recorded on a tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.wrt(*v)))
            .collect()
    }
}

/// Seeded initializer: uniform in `(-sqrt(1/fan_in), sqrt(1/fan_in))`.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape")
    }

    /// A `[rows, cols]` weight with fan-in `rows`.
    pub fn weight(&mut self, rows: usize, cols: usize) -> Tensor {
        self.uniform(&[rows, cols], rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut init = Init::new(3);
        let mut store = ParamStore::new();
        store.insert("a.w", init.weight(3, 4)).unwrap();
        store.insert("a.b", Tensor::vector(vec![0.1, 1e-300, -0.0, 1.0 / 3.0])).unwrap();
        let json = store.to_json().unwrap();
        assert!(json.starts_with("{\"a.b\":{\"shape\":[4],\"data\":["));
        let back = ParamStore::from_json(&json).unwrap();
        for (name, t) in store.iter() {
            let b = back.get(name).unwrap();
            assert_eq!(t.shape(), b.shape());
            for (x, y) in t.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_duplicates_and_shape_changes() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(store.insert("w", Tensor::zeros(&[2])).is_err());
        assert!(store.set("w", Tensor::zeros(&[3])).is_err());
        assert!(store.get("missing").is_err());
        assert!(ParamStore::from_json(r#"{"w":{"shape":[3],"data":[1.0]}}"#).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Init::new(9).weight(16, 8);
        let b = Init::new(9).weight(16, 8);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 0.25));
    }
}
