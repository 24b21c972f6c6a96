//! Named parameter storage and its binding onto a tape.

use std::ops::Index;

use numcore::{NdArray, Tape, Var};

/// Index of a trainable array in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Index of a non-trainable buffer (batch-norm running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Named {
    pub name: String,
    pub value: NdArray,
}

/// Every array a model owns, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Named>,
    pub buffers: Vec<Named>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: NdArray) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        self.params.push(Named { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: NdArray) -> BufferId {
        self.buffers.push(Named {
            name: name.into(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &NdArray {
        &self.params[id.0].value
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut NdArray {
        &mut self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &NdArray {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut NdArray {
        &mut self.buffers[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// All trainable values concatenated in registration order.
    pub fn flatten(&self) -> NdArray {
        let data: Vec<f64> = self
            .params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect();
        NdArray::vector(&data)
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.count(), "flat vector length");
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value
                .data_mut()
                .copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &NdArray> {
        self.params.iter().map(|p| &p.value)
    }
}

/// Tape variables for every parameter of a store, indexable by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Parameters as gradient-tracking leaves.
    pub fn trainable(tape: &mut Tape, store: &ParamStore) -> Self {
        Self(
            store
                .params
                .iter()
                .map(|p| tape.param(p.value.clone()))
                .collect(),
        )
    }

    /// Parameters as constants (inference).
    pub fn frozen(tape: &mut Tape, store: &ParamStore) -> Self {
        Self(
            store
                .params
                .iter()
                .map(|p| tape.constant(p.value.clone()))
                .collect(),
        )
    }

    /// Parameters carved out of one flat variable laid out like
    /// [`ParamStore::flatten`]; used to check gradients of whole models.
    pub fn from_flat(tape: &mut Tape, flat: Var, store: &ParamStore) -> Self {
        let mut offset = 0;
        let vars = store
            .params
            .iter()
            .map(|p| {
                let v = tape.slice_flat(flat, offset, p.value.shape());
                offset += p.value.len();
                v
            })
            .collect();
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}
