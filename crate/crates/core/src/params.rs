//! Named parameter storage and per-pass bindings onto a [`Graph`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name, which is a model
    /// construction bug rather than a runtime condition.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Replaces the value of a named parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.find(name).ok_or_else(|| Error::UnknownParameter(name.into()))?;
        if self.tensors[id.0].shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("`{}` is {:?}, got {:?}", name, self.tensors[id.0].shape(), value.shape()),
            ));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}

/// Uniform initialization on `[-bound, bound]`.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// One forward (and optionally backward) pass: a fresh [`Graph`] with every
/// stored parameter bound as a trainable leaf, plus the dropout policy.
pub struct Session {
    graph: Graph,
    params: Vec<Var>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl Session {
    /// Evaluation mode: dropout disabled.
    pub fn new(store: &ParamStore) -> Self {
        let mut graph = Graph::new();
        let params = store.tensors.iter().map(|t| graph.param(t.clone())).collect();
        Session { graph, params, dropout: None }
    }

    /// Training mode with inverted dropout at rate `p`.
    pub fn training(store: &ParamStore, p: f64, rng: ChaCha8Rng) -> Self {
        let mut s = Self::new(store);
        if p > 0.0 {
            s.dropout = Some((p, rng));
        }
        s
    }

    pub fn graph(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn graph_ref(&self) -> &Graph {
        &self.graph
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    /// Hands the dropout stream back so training can continue it.
    pub fn into_dropout_rng(self) -> Option<ChaCha8Rng> {
        self.dropout.map(|(_, rng)| rng)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((p, rng)) = self.dropout.as_mut() else { return Ok(x) };
        let keep = 1.0 / (1.0 - *p);
        let shape = self.graph.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n).map(|_| if rng.random::<f64>() < *p { 0.0 } else { keep }).collect();
        let mask = self.graph.constant(Tensor::from_parts(shape, mask));
        self.graph.mul(x, mask)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.graph.backward(loss)
    }

    /// Gradients for every stored parameter, zero where none flowed.
    pub fn param_grads(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|&v| match self.graph.grad(v) {
                Some(g) => g.to_vec(),
                None => alloc::vec![0.0; self.graph.value(v).numel()],
            })
            .collect()
    }
}
