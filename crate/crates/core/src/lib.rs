//! Numerical core for distantly supervised relation extraction with
//! recursive hierarchy-interactive attention and entity-order perception.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! clocks or the command line lives in the companion `rhia` crate.
//!
//! Layout:
//!
//! * [`diff`]: a small tape-based reverse-mode differentiator over row-major
//!   matrices, plus a finite-difference gradient checker.
//! * [`hierarchy`]: relation chains derived from slash-delimited relation names.
//! * [`instance`]: tokenized sentences, entity spans, relative positions and
//!   entity-order labels.
//! * [`model`]: entity-aware embedding, the piecewise CNN encoder, the RHI
//!   cells, attention pooling, the bag classifier, the order head and the
//!   training objective.
//! * [`metrics`]: held-out ranking metrics (PR curve, AUC, Max F1, P@N and
//!   macro Hits@K).
#![no_std]

extern crate alloc;

pub mod diff;
pub mod error;
pub mod hierarchy;
pub mod instance;
pub mod metrics;
pub mod model;
pub mod real;

pub use error::{Error, Result};
pub use real::Real;
