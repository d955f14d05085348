//! Low-rank matrix estimation in a data-poor target population by
//! transferring latent row/column-space information from a data-rich
//! source population.
//!
//! The toolkit provides:
//!
//! - [`matrix`]: dense matrices with missing-entry masks, truncated SVD,
//!   operator-form projections, subspace distances, and rank-r completion;
//! - [`fit`]: the LEARNER objective, its gradients, and the alternating
//!   normalized-gradient-descent solver, with missing-data support;
//! - [`select`]: four-fold entry-holdout cross-validation, selection
//!   against an external dataset, and rank selection (adaptive hard
//!   thresholding or a spectral-gap fallback);
//! - [`dlearner`]: the tuning-parameter-free direct-projection estimator;
//! - [`sim`]: seeded generators and a runner for the simulation designs;
//! - [`analysis`]: contribution scores, scree values, projection
//!   comparisons, and varimax rotation;
//! - [`io`]: delimited matrix files, CSV tables, and run manifests.

pub mod analysis;
pub mod dlearner;
pub mod error;
pub mod fit;
pub mod io;
pub mod matrix;
pub mod rng;
pub mod screenot;
pub mod select;
pub mod sim;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
