//! Numerical library for heterogeneous-Bernoulli sums, weighted fixed-size
//! sampling, and case-control logistic likelihoods.
//!
//! The crate is organized around four subsystems:
//!
//! - [`poisson_binomial`]: exact pmf and lattice-point expansions for sums of
//!   independent non-identical Bernoulli variables;
//! - [`rejective`]: the fixed-size weighted sampling law (conditional
//!   Bernoulli sampling), its inclusion probabilities, high-order centered
//!   correlations, expansions, and samplers;
//! - [`logistic`]: conditional and unconditional logistic likelihoods with
//!   exact score/information recursions, Newton fitting, and the limiting
//!   information functionals;
//! - [`designs`]: study-base generation, the standard control-sampling
//!   designs, and a seeded Monte Carlo harness over both fitters.

pub mod designs;
pub mod logistic;
pub mod poisson_binomial;
pub mod quadrature;
pub mod rejective;
pub mod scaled;
pub mod table;
