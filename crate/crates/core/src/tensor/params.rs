use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, Matrix, Tape, TensorError, Var};

/// Index of a parameter inside a [`Params`] set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedMatrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Ordered, named collection of parameter matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParam { name });
        }
        if !value.is_finite() {
            return Err(TensorError::NonFiniteParam { name });
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Records every parameter as a differentiable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound { vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect() }
    }

    /// Records every parameter as a constant (no gradient bookkeeping).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound { vars: self.values.iter().map(|v| tape.constant(v.clone())).collect() }
    }

    pub fn to_named(&self) -> Vec<NamedMatrix> {
        self.iter()
            .map(|(name, m)| NamedMatrix {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
                data: m.data().to_vec(),
            })
            .collect()
    }

    pub fn from_named(entries: Vec<NamedMatrix>) -> Result<Self, TensorError> {
        let mut p = Self::new();
        for e in entries {
            let m = Matrix::from_vec(e.rows, e.cols, e.data)?;
            p.insert(e.name, m)?;
        }
        Ok(p)
    }

    /// Overwrites values from `other`, which must have the same names and shapes.
    pub fn copy_from(&mut self, other: &Params) -> Result<(), TensorError> {
        for (name, value) in other.iter() {
            let target = self
                .index
                .get(name)
                .copied()
                .ok_or_else(|| TensorError::UnknownParam { name: name.to_string() })?;
            if self.values[target].shape() != value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "copy_from",
                    left: self.values[target].shape(),
                    right: value.shape(),
                });
            }
            self.values[target] = value.clone();
        }
        Ok(())
    }
}

/// Parameters recorded on a particular tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Per-parameter gradients in declaration order (zeros where unused).
    pub fn gradients(&self, grads: &Gradients) -> Vec<Matrix> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}
