use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::ArchSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightTensor {
    pub fn element_count(dims: &[usize]) -> usize {
        dims.iter().product()
    }
}

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, WeightTensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor. Duplicate names and payloads that disagree with
    /// `dims` are rejected.
    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Weight {
                tensor: name,
                reason: "empty tensor name".into(),
            });
        }
        let expected = WeightTensor::element_count(&dims);
        if expected != data.len() {
            return Err(Error::Weight {
                tensor: name,
                reason: format!("dims {dims:?} need {expected} values, got {}", data.len()),
            });
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::Weight {
                tensor: name,
                reason: "duplicate tensor".into(),
            });
        }
        self.tensors.insert(name, WeightTensor { dims, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Looks a tensor up and checks its dims.
    pub fn require(&self, name: &str, dims: &[usize]) -> Result<&WeightTensor> {
        let t = self.tensors.get(name).ok_or_else(|| Error::Weight {
            tensor: name.to_string(),
            reason: "missing".into(),
        })?;
        if t.dims != dims {
            return Err(Error::Weight {
                tensor: name.to_string(),
                reason: format!("expected dims {dims:?}, found {:?}", t.dims),
            });
        }
        Ok(t)
    }

    /// Checks that every tensor the architecture reads is present with the
    /// right dims. Extra tensors are tolerated.
    pub fn validate_for(&self, spec: &ArchSpec) -> Result<()> {
        for (name, dims) in spec.required_tensors() {
            self.require(&name, &dims)?;
        }
        Ok(())
    }

    /// Every tensor zero, batchnorm statistics included.
    pub fn zeros_for(spec: &ArchSpec) -> Self {
        let mut store = Self::new();
        for (name, dims) in spec.required_tensors() {
            let n = WeightTensor::element_count(&dims);
            store.tensors.insert(name, WeightTensor { dims, data: vec![0.0; n] });
        }
        store
    }

    /// He-normal convolution weights, small uniform biases, identity
    /// batchnorm. Deterministic for a given seed.
    pub fn random_for(spec: &ArchSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for (name, dims) in spec.required_tensors() {
            let n = WeightTensor::element_count(&dims);
            let data: Vec<f32> = if dims.len() == 4 {
                let fan_in = (dims[1] * dims[2] * dims[3]) as f32;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            } else if name.ends_with("running_var") || (name.ends_with(".weight") && dims.len() == 1) {
                vec![1.0; n]
            } else if name.ends_with("running_mean") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.random_range(-0.01..0.01)).collect()
            };
            store.tensors.insert(name, WeightTensor { dims, data });
        }
        store
    }
}
