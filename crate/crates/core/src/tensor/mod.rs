//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! Operations on tensors recorded on a [`Tape`] append nodes to it; the tape
//! is append-only, so node inputs always precede the node. [`Tape::grad`]
//! walks it backwards once per request. Backward rules are built from the
//! same primitives, which makes `create_graph` gradients differentiable again.
//!
//! ```
//! use stssad::tensor::{NdArray, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(NdArray::scalar(2.0));
//! let y = x.mul(&x).unwrap().mul(&x).unwrap();
//! let dy = tape.grad(&y, &[x.clone()], true).unwrap().remove(0);
//! let d2y = tape.grad(&dy, &[x], false).unwrap().remove(0);
//! assert!((dy.item() - 12.0).abs() < 1e-12);
//! assert!((d2y.item() - 12.0).abs() < 1e-12);
//! ```

mod array;
mod check;
mod ops;
mod tape;

pub use array::NdArray;
pub use check::{finite_diff_check, rel_err, FdReport};
pub use ops::{fault, sigmoid, softplus, OpKind, ALL_KINDS};
pub use tape::{Tape, Tensor};
