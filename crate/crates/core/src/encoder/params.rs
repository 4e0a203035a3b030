use crate::error::{Error, Result};

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Whether weight decay applies.
    pub decay: bool,
}

impl Param {
    pub fn new(name: &str, shape: &[usize], values: Vec<f64>, decay: bool) -> Self {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
            decay,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))
    }

    #[inline]
    pub fn values(&self, index: usize) -> &[f64] {
        &self.params[index].values
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            grads: self.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, index: usize) -> &[f64] {
        &self.grads[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.grads[index]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}
