//! Feedback strategies `pi_t(x)` viewed as random fields, the wealth they
//! generate, and sampled admissibility evidence.

mod admissibility;
mod wealth;

pub use admissibility::{
    assumption_bound_profile, check_admissibility, AdmissibilityOptions, AdmissibilityReport,
    DerivativeCheck, DEFAULT_DERIVATIVE_BOUND,
};
pub use wealth::{
    simulate_wealth, write_wealth_csv, InjectionEvent, InjectionRule, InjectionSchedule, StartPoint,
    WealthPath, FLOOR_FRACTION,
};

use std::fmt;
use std::sync::Arc;

use crate::error::{ensure_finite, ensure_gamma, Error, Result};
use crate::market::{BrownianPath, MarketParams};

/// Highest z-derivative order tracked for `e^{-z} pi(e^z)`.
pub const MAX_DERIVATIVE_ORDER: usize = 5;

/// Where a strategy is being evaluated: grid index, time and (optionally)
/// the path observed so far.
#[derive(Clone, Copy)]
pub struct StrategyContext<'a> {
    pub step: usize,
    pub t: f64,
    pub path: Option<&'a BrownianPath>,
}

impl<'a> StrategyContext<'a> {
    pub fn on_path(path: &'a BrownianPath, step: usize) -> Self {
        Self {
            step,
            t: path.time(step),
            path: Some(path),
        }
    }

    pub fn at_time(step: usize, t: f64) -> Self {
        Self { step, t, path: None }
    }
}

/// Writes the holdings `pi_t(x)` (length `k`) into the output slice.
pub type HoldingsRule = dyn Fn(&StrategyContext<'_>, f64, &mut [f64]) + Send + Sync;

/// Writes `d^m/dz^m [e^{-z} pi_t(e^z)]` (length `k`) for order `m <= 5`.
pub type ScaledDerivativeRule = dyn Fn(&StrategyContext<'_>, f64, usize, &mut [f64]) + Send + Sync;

#[derive(Clone)]
enum Form {
    /// `pi_t(x) = c x` with a constant vector `c`.
    Proportional(Vec<f64>),
    Field {
        holdings: Arc<HoldingsRule>,
        derivatives: Option<Arc<ScaledDerivativeRule>>,
    },
}

/// A feedback trading strategy. Evaluation rules must be pure.
#[derive(Clone)]
pub struct FeedbackStrategy {
    label: String,
    num_assets: usize,
    form: Form,
}

impl fmt::Debug for FeedbackStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("FeedbackStrategy");
        s.field("label", &self.label).field("num_assets", &self.num_assets);
        match &self.form {
            Form::Proportional(c) => s.field("proportions", c),
            Form::Field { derivatives, .. } => s.field("analytic_derivatives", &derivatives.is_some()),
        };
        s.finish()
    }
}

impl FeedbackStrategy {
    /// `pi(x) = c x`.
    pub fn proportional(label: impl Into<String>, proportions: Vec<f64>) -> Result<Self> {
        if proportions.is_empty() {
            return Err(Error::Config("a strategy needs at least one asset".into()));
        }
        for &c in &proportions {
            ensure_finite("proportion", c)?;
        }
        Ok(Self {
            label: label.into(),
            num_assets: proportions.len(),
            form: Form::Proportional(proportions),
        })
    }

    pub fn zero(num_assets: usize) -> Self {
        Self {
            label: "zero".into(),
            num_assets,
            form: Form::Proportional(vec![0.0; num_assets]),
        }
    }

    /// General field; derivatives are taken by finite differences in `log x`
    /// unless [`with_derivatives`](Self::with_derivatives) supplies them.
    pub fn field(label: impl Into<String>, num_assets: usize, holdings: Arc<HoldingsRule>) -> Self {
        Self {
            label: label.into(),
            num_assets,
            form: Form::Field {
                holdings,
                derivatives: None,
            },
        }
    }

    pub fn with_derivatives(mut self, rule: Arc<ScaledDerivativeRule>) -> Self {
        if let Form::Field { derivatives, .. } = &mut self.form {
            *derivatives = Some(rule);
        }
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn num_assets(&self) -> usize {
        self.num_assets
    }

    /// Constant proportions `c` when `pi(x) = c x`.
    pub fn proportions(&self) -> Option<&[f64]> {
        match &self.form {
            Form::Proportional(c) => Some(c),
            Form::Field { .. } => None,
        }
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        match &self.form {
            Form::Proportional(_) => true,
            Form::Field { derivatives, .. } => derivatives.is_some(),
        }
    }

    pub fn holdings(&self, ctx: &StrategyContext<'_>, x: f64, out: &mut [f64]) {
        match &self.form {
            Form::Proportional(c) => {
                for (o, ci) in out.iter_mut().zip(c) {
                    *o = ci * x;
                }
            }
            Form::Field { holdings, .. } => holdings(ctx, x, out),
        }
    }

    pub fn holdings_vec(&self, ctx: &StrategyContext<'_>, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_assets];
        self.holdings(ctx, x, &mut out);
        out
    }

    /// Analytic `d^m/dz^m [e^{-z} pi(e^z)]`; `false` when not available.
    pub fn scaled_derivative(&self, ctx: &StrategyContext<'_>, z: f64, order: usize, out: &mut [f64]) -> bool {
        match &self.form {
            Form::Proportional(c) => {
                if order == 0 {
                    out.copy_from_slice(c);
                } else {
                    out.iter_mut().for_each(|o| *o = 0.0);
                }
                true
            }
            Form::Field {
                derivatives: Some(rule),
                ..
            } => {
                rule(ctx, z, order, out);
                true
            }
            Form::Field { derivatives: None, .. } => false,
        }
    }

    /// `d^m/dz^m [e^{-z} pi(e^z)]` at the nodes `z_0 + i dz`, for every
    /// `m <= max_order`. Result is indexed `[m][node * k + j]`.
    ///
    /// Without analytic derivatives, order `m` is obtained from order `m-1`
    /// by central differences with step `dz` (second-order one-sided at the
    /// two ends).
    pub fn scaled_derivatives_on_grid(
        &self,
        ctx: &StrategyContext<'_>,
        nodes: &[f64],
        dz: f64,
        max_order: usize,
    ) -> Vec<Vec<f64>> {
        let k = self.num_assets;
        let m = nodes.len();
        let mut scratch = vec![0.0; k];
        if self.has_analytic_derivatives() {
            return (0..=max_order)
                .map(|order| {
                    let mut v = vec![0.0; m * k];
                    for (i, &z) in nodes.iter().enumerate() {
                        self.scaled_derivative(ctx, z, order, &mut scratch);
                        v[i * k..(i + 1) * k].copy_from_slice(&scratch);
                    }
                    v
                })
                .collect();
        }
        let mut base = vec![0.0; m * k];
        for (i, &z) in nodes.iter().enumerate() {
            let x = z.exp();
            self.holdings(ctx, x, &mut scratch);
            for j in 0..k {
                base[i * k + j] = scratch[j] / x;
            }
        }
        let mut out = vec![base];
        for _ in 0..max_order {
            let prev = out.last().expect("non-empty");
            out.push(differentiate_nodal(prev, k, dz));
        }
        out
    }
}

/// First derivative of `k` interleaved nodal series with spacing `h`.
pub(crate) fn differentiate_nodal(f: &[f64], k: usize, h: f64) -> Vec<f64> {
    let m = f.len() / k;
    let mut d = vec![0.0; f.len()];
    if m < 3 {
        return d;
    }
    for j in 0..k {
        let at = |i: usize| f[i * k + j];
        d[j] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
        for i in 1..m - 1 {
            d[i * k + j] = (at(i + 1) - at(i - 1)) / (2.0 * h);
        }
        d[(m - 1) * k + j] = (3.0 * at(m - 1) - 4.0 * at(m - 2) + at(m - 3)) / (2.0 * h);
    }
    d
}

/// Constant Merton proportion `lambda_1 / (sigma_1 (1 - gamma))` of the
/// two-asset Black–Scholes market (asset 2 excluded).
pub fn merton_proportion(market: &MarketParams, gamma: f64) -> Result<f64> {
    ensure_gamma(gamma)?;
    let bs = market.as_black_scholes().ok_or_else(|| {
        Error::Unsupported("the Merton strategy is defined for the two-asset Black–Scholes market".into())
    })?;
    let lambda = bs.lambda_closed_form();
    Ok(lambda[0] / (bs.sigma1 * (1.0 - gamma)))
}

/// Principal's optimal strategy: `pi^1(x) = lambda_1 x / (sigma_1 (1 - gamma))`, `pi^2 = 0`.
pub fn merton_strategy(market: &MarketParams, gamma: f64) -> Result<FeedbackStrategy> {
    let p = merton_proportion(market, gamma)?;
    FeedbackStrategy::proportional("merton", vec![p, 0.0])
}

/// Merton holdings in asset 1 multiplied by `kappa`.
pub fn scaled_merton(market: &MarketParams, gamma: f64, kappa: f64) -> Result<FeedbackStrategy> {
    ensure_finite("kappa", kappa)?;
    let p = merton_proportion(market, gamma)?;
    FeedbackStrategy::proportional(format!("scaled-merton {kappa}"), vec![kappa * p, 0.0])
}

/// Merton holdings in asset 1 plus `weight * x` in the excluded asset 2.
pub fn asset2_deviation(market: &MarketParams, gamma: f64, weight: f64) -> Result<FeedbackStrategy> {
    ensure_finite("weight", weight)?;
    let p = merton_proportion(market, gamma)?;
    FeedbackStrategy::proportional("asset2-deviation", vec![p, weight])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::BlackScholes;

    fn reference() -> MarketParams {
        MarketParams::black_scholes(BlackScholes::new(0.08, 0.06, 0.2, 0.3, 0.5).unwrap()).unwrap()
    }

    #[test]
    fn merton_at_reference_parameters() {
        let s = merton_strategy(&reference(), 0.5).unwrap();
        let ctx = StrategyContext::at_time(0, 0.0);
        for x in [0.1, 1.0, 7.5] {
            let pi = s.holdings_vec(&ctx, x);
            assert!((pi[0] - 4.0 * x).abs() < 1e-12 * x);
            assert_eq!(pi[1], 0.0);
        }
        assert!(s.has_analytic_derivatives());
    }

    #[test]
    fn merton_without_risk_premium_is_zero() {
        let m = MarketParams::black_scholes(BlackScholes::new(0.0, 0.0, 0.2, 0.3, 0.5).unwrap()).unwrap();
        let s = merton_strategy(&m, -2.0).unwrap();
        assert_eq!(s.proportions().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn merton_rejects_bad_gamma() {
        for g in [0.0, 1.0, 1.5, f64::NAN] {
            let err = merton_strategy(&reference(), g).unwrap_err();
            assert!(err.to_string().contains("(-inf,0)U(0,1)"), "{err}");
        }
    }

    #[test]
    fn finite_difference_derivatives_match_analytic() {
        // e^{-z} pi(e^z) = sin(z) for pi(x) = x sin(log x)
        let rule: Arc<HoldingsRule> = Arc::new(|_, x, out| out[0] = x * x.ln().sin());
        let s = FeedbackStrategy::field("sine", 1, rule);
        let dz = 0.01;
        let nodes: Vec<f64> = (0..201).map(|i| -1.0 + i as f64 * dz).collect();
        let d = s.scaled_derivatives_on_grid(&StrategyContext::at_time(0, 0.0), &nodes, dz, 2);
        for i in 10..190 {
            let z = nodes[i];
            assert!((d[0][i] - z.sin()).abs() < 1e-12);
            assert!((d[1][i] - z.cos()).abs() < 1e-4);
            assert!((d[2][i] + z.sin()).abs() < 1e-4);
        }
    }
}
