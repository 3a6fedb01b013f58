//! Minimal reverse-mode differentiation over channel-major feature maps.
//!
//! A [`Tape`] records one forward pass of a single example; parameters live
//! outside the tape in a [`ParamStore`] and receive their gradients in a
//! matching [`Grads`] buffer, so a batch is processed by running one tape
//! per example and accumulating into the same gradient buffer.

mod ops;
mod params;
mod tape;

pub use params::{Grads, ParamId, ParamStore};
pub use tape::{Shape, Tape, Var};
