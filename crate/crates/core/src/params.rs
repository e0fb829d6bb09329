//! Named parameter tensors and their binding into a computation graph.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tritrans_tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    FanIn(usize),
    Normal(f64),
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Parameter layout of a model, built once during construction.
#[derive(Clone, Debug, Default)]
pub struct ParamRegistry {
    specs: Vec<ParamSpec>,
}

impl ParamRegistry {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        debug_assert!(self.specs.iter().all(|s| s.name != name), "duplicate parameter {name}");
        self.specs.push(ParamSpec { name, shape: shape.to_vec(), init });
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Scalar parameter count.
    pub fn count(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Scalar counts grouped by the first `depth` dot-separated name components.
    pub fn census(&self, depth: usize) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for s in &self.specs {
            let key: Vec<&str> = s.name.split('.').take(depth).collect();
            *out.entry(key.join(".")).or_default() += s.shape.iter().product::<usize>();
        }
        out
    }

    /// Scalar count of every parameter whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.specs
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = self
            .specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::ones(&s.shape),
                Init::FanIn(fan_in) => Tensor::randn(&s.shape, (2.0 / fan_in as f64).sqrt(), &mut rng),
                Init::Normal(std) => Tensor::randn(&s.shape, std, &mut rng),
            })
            .collect();
        ParamStore { names: self.specs.iter().map(|s| s.name.clone()).collect(), values }
    }
}

/// Parameter values, indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(|t| t.cast()).collect() }
    }

    pub(crate) fn from_parts(names: Vec<String>, values: Vec<Tensor<T>>) -> Self {
        Self { names, values }
    }
}

/// Graph plus the graph nodes standing in for each parameter.
pub struct Ctx<'g, T: Scalar> {
    pub g: &'g Graph<T>,
    vars: Vec<Var>,
}

impl<'g, T: Scalar> Ctx<'g, T> {
    /// Parameters become gradient-tracking leaves.
    pub fn trainable(g: &'g Graph<T>, store: &ParamStore<T>) -> Self {
        Self { g, vars: store.values.iter().map(|t| g.param(t.clone())).collect() }
    }

    /// Parameters become constants (inference).
    pub fn frozen(g: &'g Graph<T>, store: &ParamStore<T>) -> Self {
        Self { g, vars: store.values.iter().map(|t| g.constant(t.clone())).collect() }
    }

    /// Uses caller-supplied nodes, one per parameter in registry order.
    pub fn from_vars(g: &'g Graph<T>, vars: Vec<Var>) -> Self {
        Self { g, vars }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of every parameter after backward; zeros where none flowed.
    pub fn grads(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(&store.values)
            .map(|(&v, t)| self.g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}
