use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// How a parameter is initialized by [`init_params`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))` with `fan_in = shape[0]` and
    /// `fan_out` the product of the remaining extents.
    Glorot,
    Zeros,
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init }
    }
}

pub fn glorot_bound(shape: &[usize]) -> f64 {
    let fan_in = shape.first().copied().unwrap_or(1);
    let fan_out: usize = shape.iter().skip(1).product::<usize>().max(1);
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Named tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut index = HashMap::new();
        let (mut names, mut tensors) = (Vec::new(), Vec::new());
        for (i, (name, t)) in entries.into_iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate parameter name {name}")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { names, tensors, index })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.param(t)).collect(),
            index: self.index.clone(),
        }
    }
}

/// Tape handles for a [`ModelParams`], in the same order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }
}

/// Initializes every spec in order from a single seeded stream.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(specs.len());
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f64> = match spec.init {
            Init::Zeros => vec![0.0; n],
            Init::Glorot => {
                let bound = glorot_bound(&spec.shape);
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        entries.push((spec.name.clone(), Tensor::new(spec.shape.clone(), data)?));
    }
    ModelParams::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::new("w", &[6, 4], Init::Glorot),
            ParamSpec::new("b", &[4], Init::Zeros),
            ParamSpec::new("emb", &[16], Init::Normal(0.02)),
        ]
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = init_params(&specs(), 7).unwrap();
        let b = init_params(&specs(), 7).unwrap();
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(
                x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        assert_ne!(a.get("w"), init_params(&specs(), 8).unwrap().get("w"));
    }

    #[test]
    fn biases_zero_and_weights_bounded() {
        let p = init_params(&specs(), 1).unwrap();
        assert!(p.get("b").unwrap().data().iter().all(|&v| v == 0.0));
        let bound = (6.0f64 / 10.0).sqrt();
        assert_eq!(glorot_bound(&[6, 4]), bound);
        assert!(p.get("w").unwrap().data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor::zeros(&[1]);
        assert!(ModelParams::new(vec![("a".into(), t.clone()), ("a".into(), t)]).is_err());
    }
}
