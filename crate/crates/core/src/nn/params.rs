use indexmap::IndexMap;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, Graph, Var};
use super::tensor::{Real, Tensor};
use crate::{Error, Result};

/// How a parameter tensor is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `±√(6 / fan_in)`.
    HeUniform {
        fan_in: usize,
    },
    /// Uniform on `±bound`.
    Uniform(f64),
    Zeros,
    Ones,
}

/// Named parameter tensors in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Records every tensor on the graph, as trainable leaves or as
    /// constants when `trainable` is false.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| {
                    let var = if trainable {
                        g.param(v.clone())
                    } else {
                        g.input(v.clone())
                    };
                    (k.clone(), var)
                })
                .collect(),
        }
    }

    /// Gradients in store order; parameters the loss did not reach get zeros.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients<T>) -> Vec<Vec<T>> {
        self.tensors
            .iter()
            .map(|(k, t)| {
                bound
                    .vars
                    .get(k)
                    .and_then(|&v| grads.take(v))
                    .unwrap_or_else(|| vec![T::zero(); t.len()])
            })
            .collect()
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn check_layout<U: Real>(&self, other: &ParamStore<U>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "parameter count {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.iter().zip(other.iter()) {
            if a != b || ta.shape() != tb.shape() {
                return Err(Error::Shape(format!(
                    "parameter {a} {:?} vs {b} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Handles for parameters already recorded on a graph.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))
    }
}

/// Declares and initialises parameters with one seeded stream, in call
/// order, so a given architecture and seed always yields the same values.
pub struct ParamBuilder<T> {
    store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> ParamBuilder<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::HeUniform { fan_in } => {
                let b = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| T::lit(self.rng.random_range(-b..b)))
                    .collect()
            }
            Init::Uniform(b) => (0..n)
                .map(|_| T::lit(self.rng.random_range(-b..b)))
                .collect(),
        };
        self.store
            .insert(name, Tensor::new(shape, data).expect("shape matches data"));
    }

    /// Convolution weight `[o, c, k, k, k]` plus bias `[o]`.
    pub fn conv(&mut self, name: &str, c: usize, o: usize, k: usize) {
        self.add(
            format!("{name}.w"),
            vec![o, c, k, k, k],
            Init::HeUniform {
                fan_in: c * k * k * k,
            },
        );
        self.add(format!("{name}.b"), vec![o], Init::Zeros);
    }

    pub fn norm(&mut self, name: &str, c: usize) {
        self.add(format!("{name}.gamma"), vec![c], Init::Ones);
        self.add(format!("{name}.beta"), vec![c], Init::Zeros);
    }

    pub fn linear(&mut self, name: &str, f: usize, o: usize) {
        self.add(
            format!("{name}.w"),
            vec![o, f],
            Init::Uniform((1.0 / f as f64).sqrt()),
        );
        self.add(format!("{name}.b"), vec![o], Init::Zeros);
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}
