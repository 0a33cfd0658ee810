use std::sync::Arc;

use crate::contract::BsClosedForm;
use crate::error::{Error, Result};
use crate::market::{BrownianPath, MarketParams};
use crate::spde::{integrate_to_u, solve_r, AnchorVol, LogGrid, SolveOptions, UtilityField};
use crate::strategy::FeedbackStrategy;

/// A utility random field that can be evaluated along simulated paths.
pub trait PathUtility: Sync {
    /// `U_0(x)`.
    fn initial(&self, x: f64) -> Result<f64>;

    /// `U_{t_i}(x_i)` on `path` for each query `(i, x_i)`.
    fn along_path(&self, path: &BrownianPath, queries: &[(usize, f64)]) -> Result<Vec<f64>>;
}

impl PathUtility for BsClosedForm {
    fn initial(&self, x: f64) -> Result<f64> {
        Ok(self.utility(1.0, x))
    }

    fn along_path(&self, path: &BrownianPath, queries: &[(usize, f64)]) -> Result<Vec<f64>> {
        queries
            .iter()
            .map(|&(step, x)| {
                if step > path.num_steps() {
                    return Err(Error::Config(format!("query index {step} beyond the path")));
                }
                Ok(self.utility(self.q(path.time(step), path.level(step)), x))
            })
            .collect()
    }
}

pub type InitialCurvature = dyn Fn(f64) -> f64 + Send + Sync;

/// Utility field built by the pathwise solver, re-solved on every path.
#[derive(Clone)]
pub struct SpdeUtility {
    pub strategy: FeedbackStrategy,
    pub market: MarketParams,
    pub grid: LogGrid,
    /// Initial curvature `R_0(x) = -U_0''(x)`.
    pub r0: Arc<InitialCurvature>,
    pub x_bar: f64,
    /// `U_0(x_bar)`.
    pub zeta0: f64,
    pub anchor: AnchorVol,
}

impl SpdeUtility {
    /// The field on one path, with every grid time kept.
    pub fn field(&self, path: &BrownianPath) -> Result<UtilityField> {
        let options = SolveOptions {
            keep_every: 1,
            probes: vec![self.x_bar],
        };
        let solution = solve_r(&self.strategy, &self.market, self.r0.as_ref(), path, &self.grid, &options)?;
        integrate_to_u(&solution, &self.strategy, &self.market, path, self.x_bar, self.zeta0, &self.anchor)
    }
}

impl PathUtility for SpdeUtility {
    fn initial(&self, x: f64) -> Result<f64> {
        let empty = BrownianPath::from_increments(self.market.num_factors(), 1.0, Vec::new())?;
        let field = self.field(&empty)?;
        field.u_at(field.initial(), x)
    }

    fn along_path(&self, path: &BrownianPath, queries: &[(usize, f64)]) -> Result<Vec<f64>> {
        let field = self.field(path)?;
        queries
            .iter()
            .map(|&(step, x)| {
                let snap = field
                    .snapshot(step)
                    .ok_or_else(|| Error::Config(format!("no field snapshot at time index {step}")))?;
                field.u_at(snap, x)
            })
            .collect()
    }
}
