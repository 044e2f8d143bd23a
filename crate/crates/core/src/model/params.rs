//! Named parameter tensors and their binding onto a graph.

use pscan_tensor::{Element, Graph, Tensor, Var};

use crate::error::{Error, Result};

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Element = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Element> Default for ParamSet<T> {
    fn default() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its slot.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
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

    pub fn get(&self, slot: usize) -> &Tensor<T> {
        &self.values[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor<T> {
        &mut self.values[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), values: self.values.iter().map(Tensor::cast).collect() }
    }

    /// Adds every tensor to `g` as a leaf; `trainable` decides whether the
    /// leaves collect gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.values.iter().map(|t| g.leaf(t.clone(), trainable)).collect()
    }

    /// Gradients of bound leaves, zero-filled where none reached a leaf.
    pub fn grads(&self, g: &Graph<T>, vars: &[Var]) -> Vec<Vec<T>> {
        vars.iter()
            .zip(&self.values)
            .map(|(&v, t)| g.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); t.numel()]))
            .collect()
    }

    /// Replaces the tensor values of `other` slots by name, checking shapes.
    pub fn load_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let slot = other.slot(name).ok_or_else(|| Error::Data(format!("parameter `{name}` missing")))?;
            let src = other.get(slot);
            if src.shape() != value.shape() {
                return Err(Error::Data(format!("parameter `{name}` has shape {:?}, expected {:?}", src.shape(), value.shape())));
            }
            *value = src.clone();
        }
        Ok(())
    }
}
