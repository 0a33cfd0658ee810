//! Monte-Carlo harness certifying the defining properties of forward
//! performance processes and robust contracts: martingality along the
//! optimal wealth, supermartingality along deviations, contract optimality,
//! robustness to capital injections, the principal's value, and agreement
//! of the pathwise solver with the closed-form family.
//!
//! Every estimator is a sequential reduction over per-path samples collected
//! in path order, so results depend only on the seeds, not on scheduling.
//! Dominance is certified against a finite, configurable deviation family;
//! the universal quantifier over all strategies is not machine-checkable.

mod injection;
mod montecarlo;
mod report;
mod spde_check;
mod utility;

pub use injection::{injection_robustness_test, InjectionScenario, NestedConfig};
pub use montecarlo::{
    deviation_test, martingale_test, principal_value_test, supermartingale_profile, ValueRole,
};
pub use report::{
    write_reports_csv, write_summary, ReportRow, Tolerance, VerificationReport, MAX_FLOORED_FRACTION,
    REPORT_COLUMNS,
};
pub use spde_check::{spde_vs_closed_form, SpdeErrors};
pub use utility::{InitialCurvature, PathUtility, SpdeUtility};

use std::collections::HashSet;

use crate::error::{ensure_gamma, ensure_positive, Error, Result};
use crate::market::{asset_path, grid_steps, BrownianPath, MarketParams};
use crate::strategy::{asset2_deviation, merton_strategy, scaled_merton, FeedbackStrategy};

/// Smallest ensemble accepted by the flat Monte-Carlo tests.
pub const MIN_PATHS: usize = 10_000;

/// Settings shared by the flat Monte-Carlo tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub paths: usize,
    pub seed: u64,
    pub horizon: f64,
    pub dt: f64,
    pub x0: f64,
}

impl McConfig {
    /// Unit horizon, `dt = 1e-3`, `X_0 = 1`.
    pub fn new(paths: usize, seed: u64) -> Self {
        Self {
            paths,
            seed,
            horizon: 1.0,
            dt: 1e-3,
            x0: 1.0,
        }
    }

    pub(crate) fn validate(&self, min_paths: usize) -> Result<usize> {
        if self.paths < min_paths {
            return Err(Error::Config(format!(
                "this test needs at least {min_paths} paths, got {}",
                self.paths
            )));
        }
        ensure_positive("X0", self.x0)?;
        grid_steps(self.horizon, self.dt)
    }
}

/// The optimal strategy (control arm) and the deviations it must dominate.
#[derive(Debug, Clone)]
pub struct DeviationFamily {
    control: FeedbackStrategy,
    deviations: Vec<FeedbackStrategy>,
}

impl DeviationFamily {
    pub fn new(control: FeedbackStrategy) -> Self {
        Self {
            control,
            deviations: Vec::new(),
        }
    }

    /// Merton control with the scaled-Merton deviations `kappa in {0.5, 1.5, 2}`,
    /// the asset-2 deviation `pi^2 = x`, and the zero strategy.
    pub fn standard(market: &MarketParams, gamma: f64) -> Result<Self> {
        let mut family = Self::new(merton_strategy(market, gamma)?);
        for kappa in [0.5, 1.5, 2.0] {
            family.push(scaled_merton(market, gamma, kappa)?)?;
        }
        family.push(asset2_deviation(market, gamma, 1.0)?)?;
        family.push(FeedbackStrategy::zero(market.num_assets()))?;
        Ok(family)
    }

    /// Adds a deviation; labels must be unique and differ from the control's.
    pub fn push(&mut self, deviation: FeedbackStrategy) -> Result<()> {
        if deviation.num_assets() != self.control.num_assets() {
            return Err(Error::Config(format!(
                "deviation `{}` trades {} assets, the control trades {}",
                deviation.label(),
                deviation.num_assets(),
                self.control.num_assets()
            )));
        }
        let taken: HashSet<&str> = self.labels().collect();
        if taken.contains(deviation.label()) {
            return Err(Error::Config(format!("duplicate strategy label `{}`", deviation.label())));
        }
        self.deviations.push(deviation);
        Ok(())
    }

    /// Keeps only the deviations whose labels are listed, in the listed order.
    pub fn select(&self, labels: &[&str]) -> Result<Self> {
        let deviations = labels
            .iter()
            .map(|l| {
                self.deviations
                    .iter()
                    .find(|d| d.label() == *l)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("unknown deviation label `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            control: self.control.clone(),
            deviations,
        })
    }

    pub fn control(&self) -> &FeedbackStrategy {
        &self.control
    }

    pub fn deviations(&self) -> &[FeedbackStrategy] {
        &self.deviations
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.control.label()).chain(self.deviations.iter().map(|d| d.label()))
    }
}

/// Terminal asset returns `S_T / S_0` on `path`: exact from `W_T` for
/// constant coefficients, otherwise by the log-Euler asset scheme.
pub(crate) fn terminal_ratios(market: &MarketParams, path: &BrownianPath) -> Result<Vec<f64>> {
    let n = path.num_steps();
    match market.constant_coefficients() {
        Some(c) => {
            let drift = c.log_drift();
            let w = path.level(n);
            let t = path.horizon();
            Ok((0..c.num_assets())
                .map(|a| {
                    let shock: f64 = (0..w.len()).map(|r| c.sigma[(r, a)] * w[r]).sum();
                    (drift[a] * t + shock).exp()
                })
                .collect())
        }
        None => Ok(asset_path(path, market, &vec![1.0; market.num_assets()])?.ratios(n)),
    }
}

/// `x^gamma / gamma`.
pub(crate) fn power_utility(x: f64, gamma: f64) -> f64 {
    x.powf(gamma) / gamma
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    ensure_gamma(gamma)
}
