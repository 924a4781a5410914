//! Named parameter blocks and their binding onto a [`Graph`].

use rand::Rng;

use crate::diffcore::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered collection of named tensors. Order is insertion order and is the
/// order used for optimizer state and checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        if let Some(i) = self.position(name) {
            self.tensors[i] = t;
        } else {
            self.names.push(name.to_string());
            self.tensors.push(t);
        }
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        Bound {
            names: self.names.clone(),
            vars,
        }
    }

    /// Same layout (names and shapes) as `other`.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }
}

/// Graph handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl Bound {
    /// Pairs names with handles already on a graph.
    pub fn from_parts(names: Vec<String>, vars: Vec<Var>) -> Self {
        Self { names, vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Argument(format!("unknown parameter `{name}`")))
    }

    /// Gradients in parameter order; unreachable parameters get zeros.
    pub fn collect_grads(&self, params: &ParamSet, grads: &mut Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(params.iter())
            .map(|(&v, (_, t))| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

/// Glorot-uniform `fan_in × fan_out` matrix.
pub fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape")
}

/// Kaiming-uniform convolution kernel `c_out × c_in × k`.
pub fn conv_kernel<R: Rng>(rng: &mut R, c_out: usize, c_in: usize, k: usize) -> Tensor {
    let a = (6.0 / (c_in * k) as f64).sqrt();
    let data = (0..c_out * c_in * k).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![c_out, c_in, k], data).expect("shape")
}
