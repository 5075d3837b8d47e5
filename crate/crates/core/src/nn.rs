//! Named parameter storage and the small layer helpers the networks share.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::io::{self, Entry};
use crate::tensor::{grad_check, Gradients, Tensor};

/// A dense parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Parameters keyed by dotted name (`encoder.s1.conv0.w`), kept in sorted order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.insert(
            name.into(),
            Param {
                shape: shape.to_vec(),
                data,
            },
        );
    }

    /// He-normal weights: N(0, gain/fan_in).
    pub fn insert_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut R,
    ) {
        let n: usize = shape.iter().product();
        let normal = Normal::new(0.0, (gain / fan_in.max(1) as f64).sqrt()).expect("positive std");
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.insert(name, shape, data);
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        let n = shape.iter().product();
        self.insert(name, shape, vec![0.0; n]);
    }

    /// Adds a dense layer `x·W + b` with `W: fan_in×fan_out`.
    pub fn insert_linear<R: Rng + ?Sized>(&mut self, prefix: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) {
        self.insert_normal(format!("{prefix}.w"), &[fan_in, fan_out], fan_in, gain, rng);
        self.insert_zeros(format!("{prefix}.b"), &[fan_out]);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters, optionally restricted to a name prefix.
    pub fn count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.data.len())
            .sum()
    }

    /// Moves all parameters from `other` in under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: ParamStore) {
        for (k, v) in other.params {
            self.params.insert(format!("{prefix}{k}"), v);
        }
    }

    /// Wraps every parameter in a fresh leaf tensor for one forward pass.
    pub fn bind(&self, requires_grad: bool) -> Bound {
        let tensors = self
            .params
            .iter()
            .map(|(k, p)| {
                let t = if requires_grad {
                    Tensor::param(&p.shape, p.data.clone())
                } else {
                    Tensor::new(&p.shape, p.data.clone())
                };
                (k.clone(), t.expect("stored shapes are consistent"))
            })
            .collect();
        Bound { tensors }
    }

    pub fn to_entries(&self) -> Vec<Entry> {
        self.params
            .iter()
            .map(|(k, p)| Entry {
                name: k.clone(),
                shape: p.shape.clone(),
                data: p.data.clone(),
            })
            .collect()
    }

    pub fn from_entries(entries: Vec<Entry>) -> Self {
        let mut s = Self::new();
        for e in entries {
            s.params.insert(
                e.name,
                Param {
                    shape: e.shape,
                    data: e.data,
                },
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::save(path, &self.to_entries())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_entries(io::load(path)?))
    }
}

/// Parameters materialized as tensors for a single forward/backward pass.
pub struct Bound {
    tensors: BTreeMap<String, Tensor>,
}

impl Bound {
    /// Wraps caller-owned tensors, e.g. the perturbed inputs of a gradient check.
    pub fn from_tensors(tensors: impl IntoIterator<Item = (String, Tensor)>) -> Self {
        Self {
            tensors: tensors.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    /// `x·W + b` for the layer stored under `prefix`.
    pub fn linear(&self, prefix: &str, x: &Tensor) -> Result<Tensor> {
        let w = self.get(&format!("{prefix}.w"))?;
        let b = self.get(&format!("{prefix}.b"))?;
        x.matmul(w)?.add_row_bias(b)
    }

    /// Gradients per parameter name; parameters the loss did not touch get zeros.
    pub fn collect_grads(&self, grads: &Gradients) -> BTreeMap<String, Vec<f64>> {
        self.tensors
            .iter()
            .map(|(k, t)| (k.clone(), grads.get_or_zeros(t)))
            .collect()
    }
}

/// Adds uniform noise in `[-scale, scale]` to every parameter.
pub fn jitter<R: Rng + ?Sized>(store: &mut ParamStore, scale: f64, rng: &mut R) {
    for p in store.params.values_mut() {
        for v in &mut p.data {
            *v += rng.random_range(-scale..scale);
        }
    }
}

/// [`grad_check`] over every parameter in `store` plus the extra `inputs`.
pub fn grad_check_params<F>(store: &ParamStore, inputs: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: Fn(&Bound, &[Tensor]) -> Result<Tensor>,
{
    let names: Vec<String> = store.names().map(String::from).collect();
    let mut all = inputs.to_vec();
    for (_, p) in store.iter() {
        all.push(Tensor::new(&p.shape, p.data.clone())?);
    }
    let k = inputs.len();
    grad_check(
        |t| {
            let bound = Bound::from_tensors(names.iter().cloned().zip(t[k..].iter().cloned()));
            f(&bound, &t[..k])
        },
        &all,
        h,
    )
}
