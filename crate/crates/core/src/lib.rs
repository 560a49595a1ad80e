//! Numerical simulator of the Dicke model: a collective spin coupled to a
//! single bosonic mode, driven through its superradiant transition by a
//! decreasing transverse field.

// `!(x > 0.0)` style guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod disentangle;
pub mod eigen;
pub mod error;
pub mod expm;
pub mod hilbert;
pub mod lindblad_oracle;
pub mod model;
pub mod observables;
pub mod propagate;
pub mod sparse;
pub mod spectrum;
pub mod units;

pub use error::{Error, Result};
