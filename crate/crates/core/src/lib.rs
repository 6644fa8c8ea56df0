//! Differentially private distributed mean estimation with binomial noise,
//! random rotation and stochastic quantization, plus distributed SGD built
//! on top of it.
//!
//! Modules:
//! - [`accountant`]: epsilon for the Gaussian and Binomial mechanisms and composition.
//! - [`transform`]: randomized Hadamard rotation.
//! - [`quantize`]: stochastic k-level quantization, binomial noise and the wire format.
//! - [`sensitivity`]: sensitivity bounds of quantized vectors and an empirical check.
//! - [`dme`]: client encoder, server aggregator, parameter selection and simulation.
//! - [`sgd`]: distributed SGD with exact, Binomial or Gaussian aggregation.
//! - [`cli`]: the `dpdme` command line.

pub mod accountant;
pub mod cli;
pub mod dme;
pub mod error;
pub mod quantize;
pub mod rng;
pub mod sensitivity;
pub mod sgd;
pub mod stats;
pub mod transform;

pub use accountant::{binomial_epsilon, compose_rounds, gaussian_epsilon, BinomialSpec, EpsilonReport, PrivacyBudget};
pub use dme::{
    client_encode, run_protocol, select_parameters, server_aggregate, Aggregator, DmeConfig, DmeResult, Encoder,
};
pub use error::{Error, Result};
pub use quantize::wire::{ClientMessage, MessageHeader, Rational, WireError};
pub use sensitivity::{empirical_sensitivity_check, sensitivity_bounds, SensitivityBounds};
pub use sgd::{run_training, Protocol, TrainingConfig};
