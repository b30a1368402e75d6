//! Multiplicative orthogonal sequential editing (MOSE) and additive
//! baselines on synthetic linear associative memories.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: dense matrix primitives (SVD, pseudoinverse, norms,
//!   condition number, Haar sampling, PCA).
//! * [`procrustes`]: the orthogonal Procrustes form of an edit.
//! * [`memory`]: synthetic key/value memory, edit streams and probes.
//! * [`editors`]: MOSE, the additive baseline, stress models, and the
//!   sequential runner.
//! * [`stability`], [`metrics`], [`drift`]: diagnostics of an edit chain.
//! * [`layers`]: layer scoring and selection on a toy FFN stack.

pub mod drift;
pub mod editors;
pub mod error;
pub mod layers;
pub mod linalg;
pub mod memory;
pub mod metrics;
pub mod procrustes;
pub mod sampling;
pub mod stability;

pub use error::{Error, Result};
pub use linalg::{Matrix, OrthogonalMatrix, ParamMatrix, SvdResult};
