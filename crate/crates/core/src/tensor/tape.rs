use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::array::NdArray;
use super::ops::Op;
use crate::error::{Error, Result};

/// Saved input or output of a recorded node. Holds no tape handle, so the
/// tape never owns a reference to itself.
#[derive(Clone)]
pub(crate) struct Saved {
    pub value: Rc<NdArray>,
    pub id: Option<usize>,
}

pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<Saved>,
    pub output: Rc<NdArray>,
}

struct TapeInner {
    nodes: Vec<Node>,
    recording: bool,
    generation: u64,
}

/// Append-only record of primitive operations. Cloning yields another handle
/// to the same tape. Confined to one thread.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("generation", &inner.generation)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                recording: true,
                generation: 0,
            })),
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: NdArray) -> Tensor {
        let value = Rc::new(value);
        let id = self.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            output: value.clone(),
        });
        Tensor {
            value,
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of completed gradient requests.
    pub fn generation(&self) -> u64 {
        self.inner.borrow().generation
    }

    pub(crate) fn is_recording(&self) -> bool {
        self.inner.borrow().recording
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn push(&self, node: Node) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }

    fn revive(&self, saved: &Saved) -> Tensor {
        Tensor {
            value: saved.value.clone(),
            node: saved.id.map(|id| NodeRef {
                tape: self.clone(),
                id,
            }),
        }
    }

    /// Reverse-mode gradient of a scalar `output` with respect to each of
    /// `wrt`. Entries not connected to `output` receive zeros. With
    /// `create_graph` the returned gradients are themselves recorded and can
    /// be differentiated again.
    pub fn grad(&self, output: &Tensor, wrt: &[Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
        let out_id = match &output.node {
            Some(n) if n.tape.same(self) => n.id,
            Some(_) => return Err(Error::TapeMismatch),
            None => return Err(Error::NotScalarOutput(output.shape().to_vec())),
        };
        if output.value.len() != 1 {
            return Err(Error::NotScalarOutput(output.shape().to_vec()));
        }
        let mut wrt_ids = Vec::with_capacity(wrt.len());
        for w in wrt {
            match &w.node {
                Some(n) if n.tape.same(self) => wrt_ids.push(n.id),
                Some(_) => return Err(Error::TapeMismatch),
                None => return Err(Error::NotDifferentiable),
            }
        }
        let zeros = |w: &Tensor| Tensor::constant(NdArray::zeros(w.shape()));
        let Some(&lo) = wrt_ids.iter().filter(|&&id| id <= out_id).min() else {
            return Ok(wrt.iter().map(zeros).collect());
        };

        // Nodes in [lo, out_id] that depend on some wrt entry.
        let span = out_id - lo + 1;
        let mut live = vec![false; span];
        {
            let inner = self.inner.borrow();
            for &id in &wrt_ids {
                if id <= out_id {
                    live[id - lo] = true;
                }
            }
            for id in lo..=out_id {
                if !live[id - lo] {
                    live[id - lo] = inner.nodes[id].inputs.iter().any(|s| {
                        s.id.is_some_and(|i| i >= lo && live[i - lo])
                    });
                }
            }
        }
        if !live[out_id - lo] {
            return Ok(wrt.iter().map(zeros).collect());
        }

        let _guard = RecordGuard::set(self, create_graph);
        let mut grads: Vec<Option<Tensor>> = vec![None; span];
        let mut is_wrt = vec![false; span];
        for &id in &wrt_ids {
            if id <= out_id {
                is_wrt[id - lo] = true;
            }
        }
        grads[out_id - lo] = Some(Tensor::constant(NdArray::ones(output.shape())));

        for id in (lo..=out_id).rev() {
            if !live[id - lo] {
                continue;
            }
            let g = if is_wrt[id - lo] {
                grads[id - lo].clone()
            } else {
                grads[id - lo].take()
            };
            let Some(g) = g else { continue };
            let (op, inputs, out) = {
                let inner = self.inner.borrow();
                let node = &inner.nodes[id];
                (node.op.clone(), node.inputs.clone(), node.output.clone())
            };
            let needs: Vec<bool> = inputs
                .iter()
                .map(|s| s.id.is_some_and(|i| i >= lo && live[i - lo]))
                .collect();
            if !needs.iter().any(|&b| b) {
                continue;
            }
            let xs: Vec<Tensor> = inputs.iter().map(|s| self.revive(s)).collect();
            let y = self.revive(&Saved {
                value: out,
                id: Some(id),
            });
            let gs = op.backward(&xs, &y, &g, &needs)?;
            for ((s, gi), need) in inputs.iter().zip(gs).zip(needs) {
                let (Some(iid), Some(gi), true) = (s.id, gi, need) else {
                    continue;
                };
                let slot = &mut grads[iid - lo];
                *slot = Some(match slot.take() {
                    Some(acc) => acc.add(&gi)?,
                    None => gi,
                });
            }
        }
        self.inner.borrow_mut().generation += 1;

        Ok(wrt
            .iter()
            .zip(&wrt_ids)
            .map(|(w, &id)| {
                if id <= out_id {
                    grads[id - lo].clone().unwrap_or_else(|| zeros(w))
                } else {
                    zeros(w)
                }
            })
            .collect())
    }
}

struct RecordGuard<'a> {
    tape: &'a Tape,
    prev: bool,
}

impl<'a> RecordGuard<'a> {
    fn set(tape: &'a Tape, on: bool) -> Self {
        let prev = std::mem::replace(&mut tape.inner.borrow_mut().recording, on);
        Self { tape, prev }
    }
}

impl Drop for RecordGuard<'_> {
    fn drop(&mut self) {
        self.tape.inner.borrow_mut().recording = self.prev;
    }
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: Tape,
    pub id: usize,
}

/// Dense tensor, optionally recorded on a [`Tape`]. Cloning is cheap.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) value: Rc<NdArray>,
    pub(crate) node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.value.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &self.value.data())
            .finish()
    }
}

impl Tensor {
    /// A tensor that is never differentiated.
    pub fn constant(value: NdArray) -> Self {
        Self {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(NdArray::scalar(v))
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn array(&self) -> &NdArray {
        &self.value
    }

    pub fn to_array(&self) -> NdArray {
        (*self.value).clone()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Same values, cut off from the tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            value: self.value.clone(),
            node: None,
        }
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    pub(crate) fn saved(&self) -> Saved {
        Saved {
            value: self.value.clone(),
            id: self.node.as_ref().map(|n| n.id),
        }
    }
}
