//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a record holding its output value, its parents and
//! a closure mapping the output cotangent to parent cotangents. Records are
//! appended in evaluation order, so walking the tape backwards is a valid
//! topological replay: each record is visited exactly once and parent
//! gradients are accumulated by summation.
//!
//! Complex quantities never enter the tape directly. Callers split them into
//! real and imaginary parts and treat each as an independent real parameter.

use std::rc::Rc;

use crate::array::NdArray;
use crate::error::{NumError, Result};

/// Maps the output cotangent to one optional cotangent per parent. The
/// `needs` slice says which parents require a gradient; entries for the
/// others may be `None`.
pub type BackwardFn = Box<dyn Fn(&NdArray, &[bool]) -> Vec<Option<NdArray>>>;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

struct GradRecord {
    value: Rc<NdArray>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    records: Vec<GradRecord>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: NdArray) -> Var {
        self.push(value, true, Vec::new(), None)
    }

    /// A leaf that never receives a gradient (data, masks, constants).
    pub fn constant(&mut self, value: NdArray) -> Var {
        self.push(value, false, Vec::new(), None)
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.records[v.0].value
    }

    /// Cheap shared handle to a value, for capture inside backward closures.
    pub fn shared(&self, v: Var) -> Rc<NdArray> {
        Rc::clone(&self.records[v.0].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.records[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.records[v.0].requires_grad
    }

    /// Records an operation. When no parent requires a gradient the result is
    /// stored as a constant and the closure is dropped.
    pub fn op(&mut self, value: NdArray, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.records[p.0].requires_grad);
        if requires_grad {
            let ids = parents.iter().map(|p| p.0).collect();
            self.push(value, true, ids, Some(backward))
        } else {
            self.push(value, false, Vec::new(), None)
        }
    }

    fn push(
        &mut self,
        value: NdArray,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Var {
        self.records.push(GradRecord {
            value: Rc::new(value),
            requires_grad,
            parents,
            backward,
        });
        Var(self.records.len() - 1)
    }

    /// Back-propagates from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = &self.records[root.0].value;
        if root_val.len() != 1 {
            return Err(NumError::NonScalar(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<NdArray>> = vec![None; root.0 + 1];
        grads[root.0] = Some(NdArray::full(root_val.shape().to_vec(), 1.0));
        for id in (0..=root.0).rev() {
            let rec = &self.records[id];
            let Some(backward) = rec.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = rec
                .parents
                .iter()
                .map(|&p| self.records[p].requires_grad)
                .collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), rec.parents.len());
            for ((&p, pg), &need) in rec.parents.iter().zip(parent_grads).zip(&needs) {
                if let (Some(pg), true) = (pg, need) {
                    accumulate(&mut grads[p], pg, self.records[p].value.shape());
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<NdArray>, g: NdArray, shape: &[usize]) {
    assert_eq!(
        g.shape(),
        shape,
        "cotangent shape does not match value shape"
    );
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Gradients of leaves after a backward pass. Intermediate cotangents are
/// released during the replay.
pub struct Gradients {
    grads: Vec<Option<NdArray>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&NdArray> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<NdArray> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
