use std::collections::HashMap;

use ndarray::Array2;

use crate::autograd::{Tape, Var};

/// Which entries of a parameter an optimizer may change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trainable {
    All,
    Frozen,
    /// Only the listed rows (e.g. a single new embedding row).
    Rows(Vec<usize>),
}

impl Trainable {
    pub fn is_frozen(&self) -> bool {
        matches!(self, Trainable::Frozen)
    }

    pub fn count(&self, shape: (usize, usize)) -> usize {
        match self {
            Trainable::All => shape.0 * shape.1,
            Trainable::Frozen => 0,
            Trainable::Rows(r) => r.len() * shape.1,
        }
    }
}

/// Named 2-D tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.values[i] = value;
            return i;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Panics on an unknown name; used for parameters the layout guarantees.
    pub fn expect_id(&self, name: &str) -> usize {
        self.id(name).unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: usize) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Array2<f64> {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }
}

/// Lazily places parameters on a tape, once each.
pub struct Binder<'a> {
    params: &'a ParamSet,
    grad: &'a [bool],
    vars: Vec<Option<Var>>,
}

impl<'a> Binder<'a> {
    /// `grad[i]` marks parameter `i` as needing a gradient; an empty slice means none do.
    pub fn new(params: &'a ParamSet, grad: &'a [bool]) -> Self {
        Self {
            params,
            grad,
            vars: vec![None; params.len()],
        }
    }

    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Var {
        let id = self.params.expect_id(name);
        if let Some(v) = self.vars[id] {
            return v;
        }
        let trainable = self.grad.get(id).copied().unwrap_or(false);
        let v = tape.leaf(self.params.value(id).clone(), trainable);
        self.vars[id] = Some(v);
        v
    }

    pub fn into_vars(self) -> Vec<Option<Var>> {
        self.vars
    }
}
