use crate::error::{CoreError, Result};
use crate::numkit::tensor::Tensor;
use std::collections::HashMap;

/// Ordered map of named parameters with matching gradient accumulators.
/// Iteration order is insertion order, so a fixed construction sequence
/// gives a fully deterministic layout.
#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    params: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(CoreError::DuplicateParam(name.to_string()));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.shape()));
        self.params.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        let i = self.idx(name)?;
        Ok(&self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.idx(name)?;
        Ok(&mut self.params[i])
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        let i = self.idx(name)?;
        Ok(&self.grads[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.names
            .iter()
            .zip(self.params.iter().zip(self.grads.iter()))
            .map(|(n, (p, g))| (n.as_str(), p, g))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &mut Tensor)> {
        self.names
            .iter()
            .zip(self.params.iter_mut().zip(self.grads.iter_mut()))
            .map(|(n, (p, g))| (n.as_str(), p, g))
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = 0.0;
            }
        }
    }

    pub fn add_grad(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let i = self.idx(name)?;
        if self.grads[i].shape() != g.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "add_grad",
                detail: format!(
                    "{}: {:?} vs {:?}",
                    name,
                    self.grads[i].shape(),
                    g.shape()
                ),
            });
        }
        for (a, b) in self.grads[i].data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(())
    }

    fn idx(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_preserved() {
        let mut ps = ParamStore::new();
        ps.insert("b", Tensor::zeros(&[2])).unwrap();
        ps.insert("a", Tensor::zeros(&[3])).unwrap();
        let names: Vec<&str> = ps.names().collect();
        assert_eq!(names, vec!["b", "a"]);
    }

    #[test]
    fn duplicate_rejected() {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::zeros(&[1])).unwrap();
        assert!(ps.insert("w", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn grad_shape_mismatch_rejected() {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(ps.add_grad("w", &Tensor::zeros(&[3])).is_err());
    }
}
