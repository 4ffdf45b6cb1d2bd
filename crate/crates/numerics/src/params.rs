use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NumericsError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named trainable tensor plus its AdamW moments.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    /// Row 0 is pinned to the zero vector (used for "absent" embedding ids).
    pub frozen_row0: bool,
    pub decay: bool,
}

/// All parameters of a model, addressable by id or by name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, decay: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
            frozen_row0: false,
            decay,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Normal(0, std) initialised matrix.
    pub fn add_normal<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f32,
        rng: &mut R,
    ) -> Result<ParamId> {
        let dist = Normal::new(0.0f32, std).expect("std must be finite and positive");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor::from_rows(rows, cols, data)?, true)
    }

    /// Embedding table whose row 0 is the frozen zero vector.
    pub fn add_zero_row_table<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f32,
        rng: &mut R,
    ) -> Result<ParamId> {
        let id = self.add_normal(name, rows, cols, std, rng)?;
        let p = &mut self.params[id.0];
        p.frozen_row0 = true;
        p.value.data_mut()[..cols].fill(0.0);
        Ok(id)
    }

    pub fn add_constant(&mut self, name: &str, cols: usize, value: f32) -> Result<ParamId> {
        self.add(name, Tensor::from_rows(1, cols, vec![value; cols])?, false)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Parameters in lexicographic name order.
    pub fn iter_by_name(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.by_name
            .iter()
            .map(|(n, id)| (n.as_str(), &self.params[id.0]))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrite a parameter's value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name)?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(crate::error::shape_err(
                "ParamStore::set_value",
                format!("{name}: {:?} vs {:?}", p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }
}

/// Per-parameter gradient buffers, lazily allocated.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f32]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut Vec<f32> {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn accumulate(&mut self, id: ParamId, g: &[f32]) {
        let slot = self.slot(id, g.len());
        for (a, b) in slot.iter_mut().zip(g) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        for g in self.grads.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut s = 0.0f64;
        for g in self.grads.iter().flatten() {
            for &x in g {
                s += (x as f64) * (x as f64);
            }
        }
        s.sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f32])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }
}
