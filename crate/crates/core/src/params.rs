//! Named parameter storage shared by every model component.

use std::ops::Index;

use rand::Rng;

use crate::autodiff::{Array, NodeId, Scalar, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of learnable arrays.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Array<T>) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Array<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> Vec<&mut Array<T>> {
        self.values.iter_mut().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    /// Replaces every value, requiring identical names and shapes.
    pub fn replace_values(&mut self, other: ParamStore<T>) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Checkpoint(format!(
                "parameter names differ: expected {:?}, found {:?}",
                self.names, other.names
            )));
        }
        for ((name, a), b) in self.names.iter().zip(&self.values).zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        self.values = other.values;
        Ok(())
    }

    /// Registers every parameter as a leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.values.iter().map(|v| tape.leaf(v.clone())).collect())
    }
}

/// Tape nodes of a [`ParamStore`] bound to one tape.
#[derive(Clone, Debug)]
pub struct Bound(Vec<NodeId>);

impl Bound {
    /// Wraps nodes that stand in for the parameters, in store order.
    pub fn from_ids(ids: Vec<NodeId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = NodeId;

    fn index(&self, id: ParamId) -> &NodeId {
        &self.0[id.0]
    }
}

pub(crate) fn uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Array<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.gen_range(-bound..=bound)))
        .collect();
    Array::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Glorot/Xavier uniform initialization.
pub(crate) fn xavier<T: Scalar>(
    rng: &mut impl Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Array<T> {
    uniform(rng, shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
}
