use std::cell::RefCell;
use std::sync::Arc;

use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of model parameters.
///
/// Tensors are reference counted so a forward pass can put them on a tape
/// without copying; the optimizer takes them back with copy-on-write.
#[derive(Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

impl std::fmt::Debug for ParamSet {
    /// Names and shapes only.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(
                self.names
                    .iter()
                    .zip(&self.values)
                    .map(|(n, v)| (n, v.shape())),
            )
            .finish()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(|v| &**v))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Flat copy of all parameters in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for v in &self.values {
            out.extend_from_slice(v.data());
        }
        out
    }

    /// Overwrites all parameters from a flat buffer in declaration order.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.numel(), "assign_flat length mismatch");
        let mut offset = 0;
        for v in &mut self.values {
            let t = Arc::make_mut(v);
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            self.values[id.0].shape(),
            value.shape(),
            "shape change for parameter {}",
            self.names[id.0]
        );
        self.values[id.0] = Arc::new(value);
    }

    pub fn map_all(&mut self, f: impl Fn(&str, &mut Tensor)) {
        for (name, v) in self.names.iter().zip(self.values.iter_mut()) {
            f(name, Arc::make_mut(v));
        }
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.values[id.0])
    }
}

/// Parameters of one [`ParamSet`] placed on a [`Graph`], created lazily on
/// first use.
pub struct Binding<'g, 'p> {
    graph: &'g Graph,
    params: &'p ParamSet,
    trainable: bool,
    vars: RefCell<Vec<Option<Var<'g>>>>,
}

impl<'g, 'p> Binding<'g, 'p> {
    /// `trainable = false` places parameters as constants, so no gradient can
    /// reach them.
    pub fn new(graph: &'g Graph, params: &'p ParamSet, trainable: bool) -> Self {
        Self {
            graph,
            params,
            trainable,
            vars: RefCell::new(vec![None; params.len()]),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn var(&self, id: ParamId) -> Var<'g> {
        let mut vars = self.vars.borrow_mut();
        *vars[id.0].get_or_insert_with(|| {
            self.graph
                .leaf_shared(self.params.shared(id), self.trainable)
        })
    }

    /// Gradients for every parameter, zero for those the pass never touched.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        let vars = self.vars.borrow();
        self.params
            .ids()
            .map(|id| {
                vars[id.0]
                    .and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(self.params.get(id).shape()))
            })
            .collect()
    }
}
