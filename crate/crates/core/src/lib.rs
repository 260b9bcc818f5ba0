//! One-pass turnstile matrix sketching: `L_{p,2}` row samplers with
//! post-processing projections, a noisy adaptive sampler, and the
//! applications built on it (row subset selection, subspace approximation,
//! projective clustering, volume maximization), plus row-arrival volume
//! maximization and exact reference oracles.

pub mod adaptive;
pub mod apps;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod randomness;
pub mod rowarrival;
pub mod samplers;
pub mod sketches;
pub mod stream;
pub mod suites;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, OrthoBasis, Power, Projector, RowVec};
pub use stream::{Stream, TurnstileUpdate};
