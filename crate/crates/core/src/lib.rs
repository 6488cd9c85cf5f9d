//! Numerical laboratory for randomly perturbed degenerate diffusions with repelling
//! invariant surfaces.
//!
//! The crate has two halves. The deterministic half computes characteristic exponents
//! ([`exponents`]) and the metastable hierarchy of a domain tree ([`hierarchy`]). The
//! stochastic half simulates desk-scale models ([`integrate`], [`montecarlo`]), the
//! abstract renewal game ([`game`]) and the semi-Markov skeleton ([`semimarkov`]).
//!
//! Numerical code is generic over [`Real`] (`f32`, `f64`); hierarchy exponents are exact
//! rationals.

pub mod config;
pub mod error;
pub mod exponents;
pub mod game;
pub mod hierarchy;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod scalar;
pub mod semimarkov;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

/// Scalar used by the command-line tool and the shipped experiments.
pub type Scalar = f64;
pub type Model1D = model::Model1D<Scalar>;
pub type NormalForm = model::Model2DNormalForm<Scalar>;
pub type Perturbation = model::PerturbationSpec<Scalar>;
pub type Gamma = exponents::GammaSolution<Scalar>;
pub type Estimate = montecarlo::EstimateResult<Scalar>;
pub type Tree = hierarchy::DomainTree<Scalar>;
pub type Profile = hierarchy::MetastableProfile<Scalar>;
