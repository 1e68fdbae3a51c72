//! Named parameter and gradient stores.
//!
//! Every tensor lives in a flat `name → ArrayD<f64>` map. Names are
//! dot-paths mirroring the network structure (`enc0.res0.conv1.w`); the
//! substrings `.mod.` and `.attn.` mark the ray-modulation and cross-view
//! attention groups, which the optimizer treats as "new" parameters with
//! their own learning-rate scale.

use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{mix, stream};

/// Parameters in the ray-modulation or attention pathways are "new" in the
/// two-stage training sense: absent from the first-stage backbone analog and
/// trained with a larger learning rate.
pub fn is_new_param(name: &str) -> bool {
    name.contains(".mod.") || name.contains(".attn.")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    map: BTreeMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>) {
        assert!(
            self.map.insert(name.to_string(), value).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_elements(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }

    /// Consumes the store, yielding the name → tensor map.
    pub fn into_inner(self) -> BTreeMap<String, ArrayD<f64>> {
        self.map
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Largest absolute difference over all tensors; errors if the two
    /// stores do not hold the same names and shapes.
    pub fn max_abs_diff(&self, other: &ParamStore) -> Result<f64> {
        if self.map.len() != other.map.len() {
            return Err(Error::shape(
                format!("{} tensors", self.map.len()),
                format!("{} tensors", other.map.len()),
            ));
        }
        let mut worst = 0.0f64;
        for (name, a) in &self.map {
            let b = other
                .map
                .get(name)
                .ok_or_else(|| Error::Config(format!("parameter {name} missing from other store")))?;
            if a.shape() != b.shape() {
                return Err(Error::shape(format!("{name}: {:?}", a.shape()), format!("{:?}", b.shape())));
            }
            for (x, y) in a.iter().zip(b.iter()) {
                worst = worst.max((x - y).abs());
            }
        }
        Ok(worst)
    }
}

/// Gradient accumulator with the same keying as [`ParamStore`].
#[derive(Debug, Clone, Default)]
pub struct GradStore {
    map: BTreeMap<String, ArrayD<f64>>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a contribution, creating the slot on first use.
    pub fn accumulate(&mut self, name: &str, grad: ArrayViewD<'_, f64>) {
        match self.map.get_mut(name) {
            Some(g) => {
                assert_eq!(g.shape(), grad.shape(), "gradient shape changed for {name}");
                *g += &grad;
            }
            None => {
                self.map.insert(name.to_string(), grad.to_owned());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.map.values_mut() {
            *g *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// √(Σ g²) over every stored gradient.
    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// How a tensor is filled at initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// N(0, 1/fan_in) — standard fan-in scaling for convs and linears.
    FanIn { fan_in: usize },
    Zeros,
    Ones,
}

/// Declares one tensor a layer owns: its full name, shape, and init rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, init: Init) -> Self {
        ParamSpec { name: name.into(), shape, init }
    }
}

/// Builds a store from layer-declared specs; rejects duplicate names via
/// the insert assertion.
pub fn init_params_from_specs(seed: u64, specs: &[ParamSpec]) -> ParamStore {
    let mut ps = ParamStore::new();
    for spec in specs {
        ps.insert(&spec.name, init_tensor(seed, &spec.name, &spec.shape, spec.init));
    }
    ps
}

/// Creates one tensor. The random stream is derived from `(seed, name)`, so
/// a tensor's initial value depends only on the master seed, its name, and
/// its shape — never on which other tensors exist. Two architectures
/// sharing a subset of names initialize that subset identically.
pub fn init_tensor(seed: u64, name: &str, shape: &[usize], init: Init) -> ArrayD<f64> {
    match init {
        Init::Zeros => ArrayD::zeros(IxDyn(shape)),
        Init::Ones => ArrayD::ones(IxDyn(shape)),
        Init::FanIn { fan_in } => {
            assert!(fan_in > 0, "fan_in must be positive for {name}");
            let std = 1.0 / (fan_in as f64).sqrt();
            let mut rng = stream(mix(seed, name));
            ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.sample::<f64, _>(StandardNormal) * std)
        }
    }
}
