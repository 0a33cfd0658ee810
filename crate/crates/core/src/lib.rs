//! Forward-performance utilities and robust fund-manager contracts.
//!
//! Given a market model and a target feedback strategy (a random field
//! `pi_t(x)`), the crate builds the stochastic utility `U_t(x)` whose optimal
//! feedback strategy is the target, turns its terminal value into a contract,
//! and checks the contract's martingale, optimality and injection-robustness
//! properties by Monte Carlo.
//!
//! Modules, bottom-up:
//! - [`market`]: asset dynamics, market price of risk, Brownian paths.
//! - [`strategy`]: feedback strategies, controlled wealth, admissibility evidence.
//! - [`spde`]: pathwise finite-difference solver for the log-curvature
//!   equation and reconstruction of `V`, `U` and the volatility field.
//! - [`contract`]: closed-form Black–Scholes family, normalized contracts,
//!   the injection-fragile indicator contract.
//! - [`verification`]: Monte-Carlo test harness and reports.

pub mod contract;
pub mod error;
pub mod market;
pub mod rng;
pub mod spde;
pub mod stats;
pub mod strategy;
pub mod verification;

pub use error::{Error, Result};
