//! Attention-based point cloud completion.
//!
//! The crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: a dense tensor type with a reverse-mode tape, the geometric
//! kernels (farthest point sampling, Chamfer distance), the cross- and
//! self-attention blocks, the coarse-to-fine completion network, the
//! multi-resolution loss with Adam, and a synthetic shape generator.
//!
//! File formats, the dataset layout and the command line live in the
//! `pointattn` crate.
//!
//! ```
//! use pointattn_core::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let a = tape.leaf(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap(), true);
//! let b = tape.leaf(Tensor::from_rows(&[&[3.0], &[4.0]]).unwrap(), false);
//! let c = tape.matmul(a, b).unwrap();
//! assert_eq!(tape.value(c).data(), &[11.0]);
//! let grads = tape.backward(c).unwrap();
//! assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);
//! ```

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0)` style tests are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod attention;
pub mod cloud;
pub mod data;
mod error;
pub mod gradcheck;
pub mod model;
mod real;
pub mod tape;
mod tensor;
pub mod train;
pub mod verify;

pub use cloud::{ChamferVariant, PointCloud};
pub use error::{Error, Result};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
