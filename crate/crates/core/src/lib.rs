//! Rényi-DP accounting for privacy amplification by model splitting,
//! dropout and balanced iteration subsampling.
//!
//! * [`rdp`] evaluates the divergence bounds between a uniform mixture over
//!   scaled binary vectors and a centered Gaussian.
//! * [`oracle`] checks those bounds against brute-force quadrature and
//!   Monte-Carlo estimates on small instances.
//! * [`accountant`] turns mechanisms into RDP curves, composes them,
//!   converts to `(ε, δ)` and calibrates noise.
//! * [`sim`] is a small deterministic trainer that exercises the
//!   structural assumptions behind the accounting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod error;
pub mod numeric;
pub mod oracle;
pub mod rdp;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use rdp::{GenericMixture, MixtureFamily, RenyiOrder};
