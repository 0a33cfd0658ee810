use rayon::prelude::*;

use super::{simulate_wealth, FeedbackStrategy, InjectionSchedule, StartPoint, StrategyContext, MAX_DERIVATIVE_ORDER};
use crate::error::{ensure_gamma, ensure_positive, Error, Result};
use crate::market::{simulate_brownian, BrownianPath, Coefficients, MarketParams};
use crate::spde::LogGrid;
use crate::stats::Estimate;

/// Derivative sup-norms above this value are reported as violations.
pub const DEFAULT_DERIVATIVE_BOUND: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityOptions {
    pub horizon: f64,
    pub dt: f64,
    pub initial_wealth: f64,
    pub seed: u64,
    /// Grid on which the derivative bound is checked.
    pub grid: LogGrid,
    pub derivative_bound: f64,
}

impl AdmissibilityOptions {
    pub fn new(horizon: f64, dt: f64, initial_wealth: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            horizon,
            dt,
            initial_wealth,
            seed,
            grid: LogGrid::around(initial_wealth)?,
            derivative_bound: DEFAULT_DERIVATIVE_BOUND,
        })
    }
}

/// Sup-norm over the grid of `sigma d^m/dz^m (e^{-z} pi(e^z))` for one order.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub order: usize,
    pub sup_norm: f64,
    pub violated: bool,
}

/// Sampled evidence on admissibility. Sampling cannot prove the integrability
/// conditions; `notes` says so explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub label: String,
    pub ensemble_size: usize,
    pub floored_paths: usize,
    /// `E sup_t X_t`.
    pub sup_wealth: Estimate,
    /// `E sup_t X_t^gamma`.
    pub sup_power: Estimate,
    /// `(ensemble size, E sup X, E sup X^gamma)` over successive doublings.
    pub doublings: Vec<(usize, Estimate, Estimate)>,
    pub divergence_suspected: bool,
    pub derivative_checks: Vec<DerivativeCheck>,
    pub notes: Vec<String>,
}

impl AdmissibilityReport {
    pub fn violating_orders(&self) -> Vec<usize> {
        self.derivative_checks
            .iter()
            .filter(|c| c.violated)
            .map(|c| c.order)
            .collect()
    }
}

/// `sup_z max_i |sum_j sigma^{ij} d^m/dz^m (e^{-z} pi^j(e^z))|` for `m = 0..=5`.
pub fn assumption_bound_profile(
    strategy: &FeedbackStrategy,
    coeffs: &Coefficients,
    ctx: &StrategyContext<'_>,
    grid: &LogGrid,
) -> Vec<f64> {
    let nodes = grid.nodes();
    let k = coeffs.num_assets();
    let d = coeffs.num_factors();
    let mut out = vec![0.0; d];
    strategy
        .scaled_derivatives_on_grid(ctx, &nodes, grid.dz(), MAX_DERIVATIVE_ORDER)
        .iter()
        .map(|deriv| {
            let mut sup = 0.0f64;
            for i in 0..nodes.len() {
                coeffs.exposure(&deriv[i * k..(i + 1) * k], &mut out);
                for v in &out {
                    sup = if v.is_finite() { sup.max(v.abs()) } else { f64::INFINITY };
                }
            }
            sup
        })
        .collect()
}

/// Monte-Carlo evidence for admissibility of `strategy` from `X_0 = initial_wealth`.
///
/// The divergence heuristic compares estimates on nested prefixes of size
/// `N/4, N/2, N`: divergence is suspected when the estimate keeps growing by
/// more than two combined standard errors at every doubling. The derivative
/// bound is checked on the grid at the start, middle and end of the first path.
pub fn check_admissibility(
    strategy: &FeedbackStrategy,
    market: &MarketParams,
    gamma: f64,
    ensemble_size: usize,
    options: &AdmissibilityOptions,
) -> Result<AdmissibilityReport> {
    ensure_gamma(gamma)?;
    ensure_positive("initial wealth", options.initial_wealth)?;
    if ensemble_size < 1000 {
        return Err(Error::Config(format!(
            "admissibility checks need at least 1000 paths, got {ensemble_size}"
        )));
    }
    let d = market.num_factors();
    let start = StartPoint::inception(options.initial_wealth);
    let samples: Vec<Option<(f64, f64)>> = (0..ensemble_size as u64)
        .into_par_iter()
        .map(|idx| -> Result<Option<(f64, f64)>> {
            let path = simulate_brownian(d, options.horizon, options.dt, options.seed, idx)?;
            let w = simulate_wealth(strategy, &path, market, start, &InjectionSchedule::none())?;
            if w.is_floored() {
                return Ok(None);
            }
            let sup_power = w
                .values()
                .iter()
                .map(|x| x.powf(gamma))
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(Some((w.running_max(), sup_power)))
        })
        .collect::<Result<Vec<_>>>()?;

    let estimate_prefix = |n: usize| {
        let kept: Vec<(f64, f64)> = samples[..n].iter().flatten().copied().collect();
        let a: Vec<f64> = kept.iter().map(|s| s.0).collect();
        let b: Vec<f64> = kept.iter().map(|s| s.1).collect();
        (Estimate::from_samples(&a), Estimate::from_samples(&b))
    };
    let sizes = [ensemble_size / 4, ensemble_size / 2, ensemble_size];
    let doublings: Vec<(usize, Estimate, Estimate)> = sizes
        .iter()
        .map(|&n| {
            let (a, b) = estimate_prefix(n);
            (n, a, b)
        })
        .collect();
    let grows = |pick: fn(&(usize, Estimate, Estimate)) -> Estimate| {
        doublings.windows(2).all(|w| {
            let (a, b) = (pick(&w[0]), pick(&w[1]));
            b.mean - a.mean > 2.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
        })
    };
    let divergence_suspected = grows(|t| t.1) || grows(|t| t.2);
    let (sup_wealth, sup_power) = estimate_prefix(ensemble_size);
    let floored_paths = samples.iter().filter(|s| s.is_none()).count();

    let first = simulate_brownian(d, options.horizon, options.dt, options.seed, 0)?;
    let derivative_checks = derivative_checks(strategy, market, &first, options)?;

    let mut notes = vec![
        "sampled evidence only: integrability over the admissible set is not provable by simulation".to_string(),
    ];
    if divergence_suspected {
        notes.push("estimates keep growing across ensemble doublings; the expectations may be infinite".into());
    }
    if floored_paths > 0 {
        notes.push(format!("{floored_paths} paths hit the positivity floor and were excluded"));
    }
    Ok(AdmissibilityReport {
        label: strategy.label().to_string(),
        ensemble_size,
        floored_paths,
        sup_wealth,
        sup_power,
        doublings,
        divergence_suspected,
        derivative_checks,
        notes,
    })
}

fn derivative_checks(
    strategy: &FeedbackStrategy,
    market: &MarketParams,
    path: &BrownianPath,
    options: &AdmissibilityOptions,
) -> Result<Vec<DerivativeCheck>> {
    let n = path.num_steps();
    let mut worst = vec![0.0f64; MAX_DERIVATIVE_ORDER + 1];
    for step in [0, n / 2, n] {
        let coeffs = market.coefficients(step, path)?;
        let profile = assumption_bound_profile(strategy, &coeffs, &StrategyContext::on_path(path, step), &options.grid);
        for (w, p) in worst.iter_mut().zip(profile) {
            *w = w.max(p);
        }
    }
    Ok(worst
        .into_iter()
        .enumerate()
        .map(|(order, sup_norm)| DerivativeCheck {
            order,
            sup_norm,
            violated: !(sup_norm <= options.derivative_bound),
        })
        .collect())
}
