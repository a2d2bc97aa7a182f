//! Named parameter storage shared by the network, optimizer and snapshot I/O.

use std::collections::HashMap;

use crate::error::{arg_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    /// Running statistics are state, not optimizer targets.
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub role: ParamRole,
    /// Included in the L1/L2 penalty.
    pub regularized: bool,
    pub value: Tensor<T>,
}

/// Ordered, uniquely named collection of parameter tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LayerParams<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new() -> Self {
        LayerParams {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        role: ParamRole,
        value: Tensor<T>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(arg_err!("duplicate parameter name {name:?}"));
        }
        if role == ParamRole::RunningVar && value.data().iter().any(|&v| !(v > T::zero())) {
            return Err(arg_err!("running variance {name:?} must be positive"));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            role,
            regularized: false,
            value,
        });
        Ok(ParamId(id))
    }

    pub fn set_regularized(&mut self, id: ParamId, on: bool) {
        self.params[id.0].regularized = on;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.role.trainable())
            .map(|p| p.value.len())
            .sum()
    }

    pub fn non_trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.role.trainable())
            .map(|p| p.value.len())
            .sum()
    }

    /// Parameters included in the weight penalty.
    pub fn regularized(&self) -> Vec<&Tensor<T>> {
        self.params
            .iter()
            .filter(|p| p.regularized)
            .map(|p| &p.value)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut p = LayerParams::<f32>::new();
        p.push("a", ParamRole::Weight, Tensor::zeros(&[2])).unwrap();
        assert!(p.push("a", ParamRole::Bias, Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn running_variance_must_be_positive() {
        let mut p = LayerParams::<f32>::new();
        assert!(p
            .push("v", ParamRole::RunningVar, Tensor::zeros(&[2]))
            .is_err());
    }

    #[test]
    fn fc_two_to_three_has_nine_parameters() {
        let mut p = LayerParams::<f64>::new();
        p.push("fc.weight", ParamRole::Weight, Tensor::zeros(&[2, 3])).unwrap();
        p.push("fc.bias", ParamRole::Bias, Tensor::zeros(&[3])).unwrap();
        assert_eq!(p.trainable_count(), 9);
        assert_eq!(p.non_trainable_count(), 0);
    }
}
