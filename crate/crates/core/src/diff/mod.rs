//! Reverse-mode differentiation over row-major matrices.
//!
//! A [`Tape`] records every primitive applied during a forward pass.
//! Parameters live in a [`ParamStore`] and enter the tape as leaves without
//! being copied; [`Tape::backward`] replays the record in reverse and returns
//! per-parameter gradients that the caller folds into the store.
//!
//! Vectors are `1 × n` matrices. Batched computations put one sentence (or
//! one token, or one bag) per row.

mod gradcheck;
mod linalg;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, HasParams, GradCheckReport, WorstCoordinate};
pub use params::{Gradients, ParamId, ParamStore, Tensor};
pub use tape::{NodeId, OpKind, Tape};
