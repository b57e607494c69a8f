//! Certified inner approximations of reach-avoid sets for polynomial SDEs.
//!
//! The pipeline compiles a sum-of-squares program into a block-diagonal SDP,
//! solves it with the bundled interior-point solver, extracts a barrier-like
//! certificate `v` and checks it both pointwise and against Monte-Carlo
//! estimates of the reach-avoid probability.

pub mod certcheck;
pub mod error;
pub mod generator;
pub mod mcsim;
pub mod moments;
pub mod poly;
pub mod problem;
pub mod sdp;
pub mod sos;

pub use error::{Error, Result};

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../README.md")]
    pub mod readme {}
    #[doc = include_str!("../../../book/src/problems.md")]
    pub mod problems {}
    #[doc = include_str!("../../../book/src/certificates.md")]
    pub mod certificates {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
}
