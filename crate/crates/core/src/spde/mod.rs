//! Pathwise finite-difference solver for the curvature `R = -U_xx` in the
//! variable `z = log x`, and reconstruction of `V`, `U` and the volatility
//! field `a` from it.
//!
//! The unknown is `Y = log R(e^z)`: the exponential keeps `R` strictly
//! positive by construction.

mod coefficients;
mod grid;
mod reconstruct;
mod solver;

pub use coefficients::{build_log_coefficients, LogCoefficients};
pub use grid::{LogGrid, DEFAULT_ETA, DEFAULT_HALF_WIDTH, DEFAULT_NODES, MIN_NODES};
pub use reconstruct::{
    integrate_to_u, recover_strategy, volatility_a, write_field_csv, AnchorRule, AnchorState, AnchorVol,
    FieldSnapshot, RecoveredStrategy, UtilityField,
};
pub use solver::{solve_r, step_y, RSolution, SolveOptions};
