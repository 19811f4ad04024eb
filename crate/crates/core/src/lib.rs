//! Monte Carlo laboratory for the continuous directed polymer, i.e. the
//! finite-volume Gaussian multiplicative chaos on Wiener space in `d >= 3`.
//!
//! The model: a space-time white noise on `[0,T] x box`, discretized as one
//! independent Gaussian increment per lattice cell, is integrated along
//! Brownian paths through a spatial mollifier. The resulting Hamiltonian
//! `H_T(path)` tilts the Wiener measure into the random polymer measure
//! `exp(gamma * H_T - gamma^2/2 * Var) dP_0`, whose normalization, moments,
//! size-biased (Girsanov) description and small-ball volume decay are all
//! estimated here with explicit error bars.
//!
//! Module map:
//! - [`lattice`], [`rng`], [`mollifier`], [`noise`]: the discretized
//!   environment and the Hamiltonian.
//! - [`paths`], [`bessel`], [`wiener_ball`]: Brownian sampling, weighted
//!   norms, Bessel-root small-ball constants and Wiener small-ball / Gaussian
//!   inequality estimators.
//! - [`polymer`]: partition functions, martingale / L^2 / free-energy
//!   diagnostics, the Khasminskii certificate and the atomic energy
//!   functional.
//! - [`girsanov`]: exact size-biased sampling, thick points, the linear
//!   perturbation identity.
//! - [`moments`]: positive/negative moments, running maximum, tail probes.
//! - [`smallball`]: decay-exponent bounds, the matching-as-disorder-vanishes
//!   construction, and the polymer small-ball estimator.

pub mod bessel;
pub mod error;
pub mod girsanov;
pub mod lattice;
pub mod moments;
pub mod mollifier;
pub mod noise;
pub mod paths;
pub mod polymer;
pub mod rng;
pub mod smallball;
pub mod stats;
pub mod wiener_ball;

pub use error::Error;
pub use lattice::LatticeSpec;
pub use mollifier::{build_mollifier, mollifier_overlap, Mollifier, Profile};
pub use noise::{
    discrete_overlap, field_increment, hamiltonian, sample_noise, shifted_noise, HamiltonianValue,
    WhiteNoiseRealization,
};
pub use paths::{sample_brownian, weighted_norm, PathSample, WeightFunction};
