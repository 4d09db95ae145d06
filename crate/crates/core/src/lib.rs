//! AND-OR interaction analysis of black-box model outputs.
//!
//! Given all `2^n` outputs of a scalar model over the masked versions of one
//! input sample, this crate decomposes the output into AND and OR interaction
//! effects on the subset lattice, sparsifies the decomposition, summarizes it
//! into per-order strength profiles, and tracks how those profiles evolve
//! across training epochs to locate the onset of overfitting.
//!
//! The pieces, bottom up:
//!
//! * [`lattice`]: subset masks and the fast subset-lattice transforms.
//! * [`interaction`]: the AND-OR split, L1 sparsification, matching and
//!   stability checks.
//! * [`metrics`]: per-order strengths, interaction vectors, Jaccard
//!   generalization similarity, and the Gaussian-noise baselines.
//! * [`dynamics`]: epoch-series aggregation and phase-transition detection.
//! * [`toy`]: a deterministic small trainer that can emit masked-output
//!   tables at any checkpoint.
//! * [`io`]: the table / spectrum / manifest file formats and CSV emission.
//! * [`pipeline`]: end-to-end experiment drivers used by the CLI.

pub mod dynamics;
pub mod interaction;
pub mod io;
pub mod lattice;
pub mod metrics;
pub mod pipeline;
pub mod toy;

mod error;

pub use error::{Error, Result};
