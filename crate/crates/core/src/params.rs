//! Named parameter storage, initialization and graph binding.
//!
//! Parameters live in a [`ParamMap`] as plain arrays, ordered by registration.
//! A forward pass borrows them through a [`Binder`], which wraps each touched
//! parameter in a graph leaf exactly once — so a parameter used from several
//! places (the shared temporal encoder, say) accumulates all its gradient
//! contributions on one node.

use crate::error::{Error, Result};
use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use std::cell::RefCell;
use vseg_autograd::Tensor;

/// Ordered name -> tensor parameter collection.
#[derive(Debug, Clone, Default)]
pub struct ParamMap {
    map: IndexMap<String, ArrayD<f64>>,
}

impl ParamMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.map.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Total scalar element count.
    pub fn num_elements(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// SHA-256 over names, shapes and exact bit patterns of every parameter
    /// whose name starts with `prefix` (all parameters when `None`). Used to
    /// prove that an update phase touched only its own partition.
    pub fn digest(&self, prefix: Option<&str>) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, value) in &self.map {
            if let Some(p) = prefix {
                if !name.starts_with(p) {
                    continue;
                }
            }
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update((value.ndim() as u64).to_le_bytes());
            for &d in value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in value.iter() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Seeded parameter registration: truncated-normal weights (resampled beyond
/// two standard deviations), constant fills for biases and norm scales.
/// Registration order fixes both the RNG consumption and the map order.
pub struct ParamInit {
    map: ParamMap,
    rng: ChaCha8Rng,
    std: f64,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        ParamInit {
            map: ParamMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            std: 0.02,
        }
    }

    pub fn weight(&mut self, name: impl Into<String>, shape: &[usize]) {
        let normal = Normal::new(0.0, self.std).unwrap();
        let bound = 2.0 * self.std;
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || loop {
            let v: f64 = normal.sample(&mut self.rng);
            if v.abs() <= bound {
                break v;
            }
        });
        self.map.insert(name, value);
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.map.insert(name, ArrayD::zeros(IxDyn(shape)));
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.map.insert(name, ArrayD::from_elem(IxDyn(shape), 1.0));
    }

    pub fn finish(self) -> ParamMap {
        self.map
    }
}

/// Wraps parameters as graph nodes for one forward/backward pass.
pub struct Binder<'a> {
    params: &'a ParamMap,
    trainable: bool,
    leaves: RefCell<IndexMap<String, Tensor>>,
}

impl<'a> Binder<'a> {
    /// Parameters become gradient-receiving leaves.
    pub fn train(params: &'a ParamMap) -> Self {
        Binder {
            params,
            trainable: true,
            leaves: RefCell::new(IndexMap::new()),
        }
    }

    /// Parameters become constants; no graph history is recorded through them.
    pub fn frozen(params: &'a ParamMap) -> Self {
        Binder {
            params,
            trainable: false,
            leaves: RefCell::new(IndexMap::new()),
        }
    }

    /// Fetches (and on first touch, wraps) a parameter. Unknown names are a
    /// programming error, not an input condition.
    pub fn get(&self, name: &str) -> Tensor {
        if let Some(t) = self.leaves.borrow().get(name) {
            return t.clone();
        }
        let value = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unregistered parameter `{name}`"))
            .clone();
        let tensor = if self.trainable {
            Tensor::leaf(value)
        } else {
            Tensor::constant(value)
        };
        self.leaves
            .borrow_mut()
            .insert(name.to_string(), tensor.clone());
        tensor
    }

    /// Gradients deposited by `backward`, keyed by parameter name, in
    /// first-touch order. Untouched or gradient-free parameters are absent.
    pub fn grads(&self) -> IndexMap<String, ArrayD<f64>> {
        let mut out = IndexMap::new();
        for (name, leaf) in self.leaves.borrow().iter() {
            if let Some(g) = leaf.grad() {
                out.insert(name.clone(), g);
            }
        }
        out
    }
}

/// Validates that `params` carries exactly the names and shapes of
/// `reference` (used when loading checkpoints).
pub fn validate_compatible(reference: &ParamMap, params: &ParamMap) -> Result<()> {
    for (name, value) in reference.iter() {
        match params.get(name) {
            None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
            Some(v) if v.shape() != value.shape() => {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    v.shape(),
                    value.shape()
                )))
            }
            _ => {}
        }
    }
    if let Some(extra) = params.names().find(|n| reference.get(n).is_none()) {
        return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
    }
    Ok(())
}
