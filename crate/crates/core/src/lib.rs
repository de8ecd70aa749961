//! Open-set domain adaptation by alternating constrained assignment and
//! linear transformation estimation.
//!
//! The pipeline:
//!
//! 1. [`dataset`] loads or synthesizes source/target feature sets and the
//!    class catalog (shared classes plus one `unknown` class).
//! 2. [`assign`] labels target samples by source class means, with outlier
//!    rejection, optional labeled targets and an optional neighbourhood term.
//! 3. [`transform`] fits a linear map from source to target space on the
//!    matched pairs.
//! 4. [`ati`] alternates 2 and 3 until convergence.
//! 5. [`svm`] trains one-vs-one linear SVMs on the adapted source and
//!    [`eval`] scores predictions under the CS / OS / OS* protocols.
//!
//! [`oracle`] holds brute-force references used by the tests and the `check`
//! command.

pub mod assign;
pub mod ati;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod rng;
pub mod svm;
pub mod transform;

pub use error::{Error, Result};
