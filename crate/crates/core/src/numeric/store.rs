use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::NumericError;

/// A trainable tensor with its gradient buffer and Adam state.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl ParamEntry {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            step: 0,
        }
    }
}

/// Named parameters, iterated in name order.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), NumericError> {
        if self.entries.contains_key(name) {
            return Err(NumericError::DuplicateParam(name.to_string()));
        }
        if !value.is_finite() {
            return Err(NumericError::NonFinite {
                node: format!("parameter `{name}`"),
            });
        }
        self.entries.insert(name.to_string(), ParamEntry::new(value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    /// Overwrite a parameter's value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), NumericError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| NumericError::UnknownParam(name.to_string()))?;
        if entry.value.shape() != value.shape() {
            return Err(NumericError::BadShape(format!(
                "parameter `{name}` has shape {:?}, new value {:?}",
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.grad)
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor, scale: f64) -> Result<(), NumericError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| NumericError::UnknownParam(name.to_string()))?;
        if entry.grad.shape() != g.shape() {
            return Err(NumericError::BadShape(format!(
                "gradient for `{name}` has shape {:?}, expected {:?}",
                g.shape(),
                entry.grad.shape()
            )));
        }
        for (a, b) in entry.grad.data_mut().iter_mut().zip(g.data()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }
}
