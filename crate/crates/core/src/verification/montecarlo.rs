use std::time::Instant;

use rayon::prelude::*;

use super::report::{ReportRow, Tolerance, VerificationReport};
use super::utility::{PathUtility, SpdeUtility};
use super::{check_gamma, power_utility, terminal_ratios, DeviationFamily, McConfig, MIN_PATHS};
use crate::contract::{bs_value_function, Contract, TerminalState};
use crate::error::{Error, Result};
use crate::market::{simulate_brownian, BrownianPath, MarketParams};
use crate::stats::Estimate;
use crate::strategy::{simulate_wealth, FeedbackStrategy, InjectionSchedule, StartPoint, StrategyContext};

/// Runs `f` on paths `0..paths` of the configured seed, in parallel, and
/// returns the results in path order.
fn per_path<T, F>(cfg: &McConfig, dim: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&BrownianPath) -> Result<T> + Sync,
{
    (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| f(&simulate_brownian(dim, cfg.horizon, cfg.dt, cfg.seed, i)?))
        .collect()
}

/// Grid indices of the checkpoints, which must be grid times in `[0, T]`
/// listed in increasing order.
fn checkpoint_steps(cfg: &McConfig, checkpoints: &[f64]) -> Result<Vec<usize>> {
    if checkpoints.is_empty() {
        return Err(Error::Config("at least one checkpoint is required".into()));
    }
    let probe = BrownianPath::from_increments(1, cfg.dt, vec![0.0; super::grid_steps(cfg.horizon, cfg.dt)?])?;
    let steps = checkpoints
        .iter()
        .map(|&t| probe.step_of(t))
        .collect::<Result<Vec<_>>>()?;
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("checkpoints must increase strictly, got {checkpoints:?}")));
    }
    Ok(steps)
}

fn column(samples: &[Vec<f64>], j: usize) -> Vec<f64> {
    samples.iter().map(|s| s[j]).collect()
}

fn time_label(t: f64) -> String {
    format!("t={t}")
}

/// `E[U_t(X_t)]` at the checkpoints for wealth driven by `strategy` from `X_0`,
/// each value paired with the per-path samples.
fn utility_profile(
    utility: &dyn PathUtility,
    strategy: &FeedbackStrategy,
    market: &MarketParams,
    steps: &[usize],
    cfg: &McConfig,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let start = StartPoint::inception(cfg.x0);
    let samples = per_path(cfg, market.num_factors(), |path| {
        let w = simulate_wealth(strategy, path, market, start, &InjectionSchedule::none())?;
        let queries: Vec<(usize, f64)> = steps.iter().map(|&s| (s, w.values()[s])).collect();
        Ok((utility.along_path(path, &queries)?, w.is_floored()))
    })?;
    let floored = samples.iter().filter(|s| s.1).count();
    Ok((samples.into_iter().map(|s| s.0).collect(), floored))
}

/// Checks that `E[U_t(X*_t)] = U_0(X_0)` within three standard errors at
/// every checkpoint, for wealth driven by the optimal strategy.
///
/// Constancy of the expectation is the evidence that the local martingale
/// `U_t(X*_t)` is a true martingale.
pub fn martingale_test(
    utility: &dyn PathUtility,
    strategy: &FeedbackStrategy,
    market: &MarketParams,
    checkpoints: &[f64],
    cfg: &McConfig,
) -> Result<VerificationReport> {
    let clock = Instant::now();
    cfg.validate(MIN_PATHS)?;
    let steps = checkpoint_steps(cfg, checkpoints)?;
    let target = utility.initial(cfg.x0)?;
    let (samples, floored) = utility_profile(utility, strategy, market, &steps, cfg)?;

    let mut report = VerificationReport::new("martingale_test", cfg.paths, cfg.seed);
    for (j, &t) in checkpoints.iter().enumerate() {
        let e = Estimate::from_samples(&column(&samples, j));
        report
            .rows
            .push(ReportRow::from_estimate(time_label(t), &e, target, Tolerance::StdErrs(3.0)));
    }
    report.notes.push(format!("strategy `{}`; target U_0(X_0) = {target}", strategy.label()));
    report.set_floored(floored, cfg.paths);
    report.runtime = clock.elapsed();
    Ok(report)
}

/// Profile of `E[U_t(X_t)]` along a deviation, at `t = 0` and the checkpoints.
///
/// Each step must be non-increasing within two standard errors of the paired
/// per-path differences. With `expect_strict`, the final value must also lie
/// more than two standard errors below `U_0(X_0)`.
pub fn supermartingale_profile(
    utility: &dyn PathUtility,
    deviation: &FeedbackStrategy,
    market: &MarketParams,
    checkpoints: &[f64],
    cfg: &McConfig,
    expect_strict: bool,
) -> Result<VerificationReport> {
    let clock = Instant::now();
    cfg.validate(MIN_PATHS)?;
    let mut times = vec![0.0];
    times.extend(checkpoints.iter().copied().filter(|t| *t != 0.0));
    let steps = checkpoint_steps(cfg, &times)?;
    let initial = utility.initial(cfg.x0)?;
    let (samples, floored) = utility_profile(utility, deviation, market, &steps, cfg)?;

    let mut report = VerificationReport::new("supermartingale_profile", cfg.paths, cfg.seed);
    let mut previous = Estimate::from_samples(&column(&samples, 0));
    for j in 1..times.len() {
        let current = Estimate::from_samples(&column(&samples, j));
        let diffs: Vec<f64> = samples.iter().map(|s| s[j] - s[j - 1]).collect();
        let step = Estimate::from_samples(&diffs);
        let pass = step.mean <= 2.0 * step.stderr + 1e-12 * previous.mean.abs();
        report.rows.push(
            ReportRow::new(
                time_label(times[j]),
                current.mean,
                current.stderr,
                previous.mean,
                Tolerance::AtMost(2.0),
            )
            .with_outcome(pass),
        );
        previous = current;
    }
    if expect_strict {
        report.rows.push(ReportRow::from_estimate(
            "strict-decrease",
            &previous,
            initial,
            Tolerance::BelowBy(2.0),
        ));
    }
    report.notes.push(format!(
        "strategy `{}`; U_0(X_0) = {initial}; steps compared through paired differences",
        deviation.label()
    ));
    report.set_floored(floored, cfg.paths);
    report.runtime = clock.elapsed();
    Ok(report)
}

/// `E[C(X^pi_T)]` for the control and every deviation on common paths.
///
/// The control must match `u0` within three standard errors. Each deviation
/// must lie more than two standard errors below `u0` and more than two
/// standard errors (of the paired differences) below the control. The
/// indicator contract's per-path target is the control's terminal wealth.
/// SPDE-built contracts read the terminal field solved by `fields` on each path.
pub fn deviation_test(
    contract: &Contract,
    family: &DeviationFamily,
    market: &MarketParams,
    cfg: &McConfig,
    fields: Option<&SpdeUtility>,
) -> Result<VerificationReport> {
    let clock = Instant::now();
    cfg.validate(MIN_PATHS)?;
    let start = StartPoint::inception(cfg.x0);
    let none = InjectionSchedule::none();
    let arms: Vec<&FeedbackStrategy> = std::iter::once(family.control()).chain(family.deviations()).collect();

    let samples = per_path(cfg, market.num_factors(), |path| {
        let ratios = terminal_ratios(market, path)?;
        let field = fields.map(|f| f.field(path)).transpose()?;
        let mut floored = false;
        let mut terminal = Vec::with_capacity(arms.len());
        for s in &arms {
            let w = simulate_wealth(s, path, market, start, &none)?;
            floored |= w.is_floored();
            terminal.push(w.terminal());
        }
        let n = path.num_steps();
        let state = TerminalState {
            t: path.horizon(),
            w: path.level(n),
            ratios: &ratios,
            target_wealth: Some(terminal[0]),
            field: field.as_ref(),
        };
        let payouts = terminal
            .iter()
            .map(|&x| contract.payout(x, &state))
            .collect::<Result<Vec<_>>>()?;
        Ok((payouts, floored))
    })?;
    let floored = samples.iter().filter(|s| s.1).count();
    let payouts: Vec<Vec<f64>> = samples.into_iter().map(|s| s.0).collect();

    let u0 = contract.u0();
    let mut report = VerificationReport::new("deviation_test", cfg.paths, cfg.seed);
    let control = Estimate::from_samples(&column(&payouts, 0));
    report
        .rows
        .push(ReportRow::from_estimate("control", &control, u0, Tolerance::StdErrs(3.0)));
    for (j, dev) in arms.iter().enumerate().skip(1) {
        let e = Estimate::from_samples(&column(&payouts, j));
        let gap = Estimate::from_samples(&payouts.iter().map(|p| p[0] - p[j]).collect::<Vec<_>>());
        let dominated = gap.mean > 2.0 * gap.stderr;
        let row = ReportRow::from_estimate(dev.label(), &e, u0, Tolerance::BelowBy(2.0));
        let pass = row.pass && dominated;
        if !dominated {
            report.notes.push(format!(
                "arm `{}` is not dominated by the control: paired gap {:.6} with standard error {:.6}",
                dev.label(),
                gap.mean,
                gap.stderr
            ));
        }
        report.rows.push(row.with_outcome(pass));
    }
    report.notes.push(format!(
        "contract {}; control `{}`; common random numbers across arms",
        contract.provenance(),
        family.control().label()
    ));
    report.set_floored(floored, cfg.paths);
    report.runtime = clock.elapsed();
    Ok(report)
}

/// Whether the tested strategy is claimed optimal for the principal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRole {
    /// Must attain `V(0, X_0)` within three standard errors.
    Optimal,
    /// Must not exceed `V(0, X_0)` beyond three standard errors.
    Comparison,
}

/// Largest relative holding in the excluded asset 2 at `t = 0` over a wealth
/// sweep (exact for proportional strategies).
fn excluded_asset_holding(strategy: &FeedbackStrategy, x0: f64) -> f64 {
    if let Some(c) = strategy.proportions() {
        return c.iter().skip(1).fold(0.0, |m, v| m.max(v.abs()));
    }
    let ctx = StrategyContext::at_time(0, 0.0);
    (-12..=12)
        .map(|k| {
            let x = x0 * (0.5 * k as f64).exp();
            strategy.holdings_vec(&ctx, x).iter().skip(1).fold(0.0f64, |m, v| m.max(v.abs())) / x
        })
        .fold(0.0, f64::max)
}

/// Principal's objective `J(pi) = E[(X^pi_T)^gamma] / gamma` against the
/// closed-form value `V(0, X_0)` of the two-asset Black–Scholes market.
///
/// Strategies holding the excluded asset 2 have `J = -inf`; they are reported
/// as constraint violations without simulation.
pub fn principal_value_test(
    strategy: &FeedbackStrategy,
    market: &MarketParams,
    gamma: f64,
    cfg: &McConfig,
    role: ValueRole,
) -> Result<VerificationReport> {
    let clock = Instant::now();
    check_gamma(gamma)?;
    cfg.validate(MIN_PATHS)?;
    let bs = market.as_black_scholes().ok_or_else(|| {
        Error::Unsupported("the principal's value is available for the Black–Scholes market only".into())
    })?;
    let target = bs_value_function(0.0, cfg.x0, bs, gamma, cfg.horizon)?;
    let mut report = VerificationReport::new("principal_value_test", cfg.paths, cfg.seed);

    let excluded = excluded_asset_holding(strategy, cfg.x0);
    if excluded > 0.0 {
        let row = ReportRow::new(strategy.label(), f64::NEG_INFINITY, 0.0, target, Tolerance::Info);
        report.rows.push(row.with_outcome(role == ValueRole::Comparison));
        report.notes.push(format!(
            "`{}`: constraint violated, J = -inf (holds asset 2, |pi^2/x| up to {excluded})",
            strategy.label()
        ));
        report.runtime = clock.elapsed();
        return Ok(report);
    }

    let start = StartPoint::inception(cfg.x0);
    let samples = per_path(cfg, market.num_factors(), |path| {
        let w = simulate_wealth(strategy, path, market, start, &InjectionSchedule::none())?;
        Ok((power_utility(w.terminal(), gamma), w.is_floored()))
    })?;
    let floored = samples.iter().filter(|s| s.1).count();
    let e = Estimate::from_samples(&samples.iter().map(|s| s.0).collect::<Vec<_>>());
    let tol = match role {
        ValueRole::Optimal => Tolerance::StdErrs(3.0),
        ValueRole::Comparison => Tolerance::AtMost(3.0),
    };
    report.rows.push(ReportRow::from_estimate(strategy.label(), &e, target, tol));
    report.notes.push(format!("gamma = {gamma}; V(0, X_0) = {target}"));
    report.set_floored(floored, cfg.paths);
    report.runtime = clock.elapsed();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::{fake_contract, BsClosedForm};
    use crate::market::BlackScholes;
    use crate::strategy::{asset2_deviation, merton_strategy, scaled_merton};

    fn bs() -> BlackScholes {
        BlackScholes::new(0.08, 0.06, 0.2, 0.3, 0.5).unwrap()
    }

    fn reference() -> MarketParams {
        MarketParams::black_scholes(bs()).unwrap()
    }

    fn cfg() -> McConfig {
        McConfig {
            paths: 10_000,
            seed: 17,
            horizon: 1.0,
            dt: 0.01,
            x0: 1.0,
        }
    }

    fn form(eps: f64) -> BsClosedForm {
        BsClosedForm::new(bs(), 0.5, eps, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn martingale_passes_for_optimal_and_fails_for_deviation() {
        let m = reference();
        let ok = martingale_test(&form(0.5), &merton_strategy(&m, 0.5).unwrap(), &m, &[0.5, 1.0], &cfg()).unwrap();
        assert!(ok.passed(), "{}", ok.summary_line());
        let bad = martingale_test(&form(0.5), &scaled_merton(&m, 0.5, 2.0).unwrap(), &m, &[1.0], &cfg()).unwrap();
        assert!(!bad.passed());
    }

    #[test]
    fn static_market_has_zero_variance() {
        let m = MarketParams::black_scholes(BlackScholes::new(0.0, 0.0, 0.2, 0.3, 0.5).unwrap()).unwrap();
        let f = BsClosedForm::new(*m.as_black_scholes().unwrap(), 0.5, 0.5, 1.0, 1.0, 1.0).unwrap();
        let r = martingale_test(&f, &merton_strategy(&m, 0.5).unwrap(), &m, &[0.5, 1.0], &cfg()).unwrap();
        assert!(r.passed());
        assert!(r.rows.iter().all(|row| row.stderr == 0.0 && row.estimate == 4.0));
    }

    #[test]
    fn small_ensembles_and_bad_checkpoints_are_rejected() {
        let m = reference();
        let s = merton_strategy(&m, 0.5).unwrap();
        let mut c = cfg();
        c.paths = 100;
        assert!(martingale_test(&form(0.5), &s, &m, &[1.0], &c).is_err());
        assert!(martingale_test(&form(0.5), &s, &m, &[0.5, 0.25], &cfg()).is_err());
        assert!(martingale_test(&form(0.5), &s, &m, &[0.123], &cfg()).is_err());
    }

    #[test]
    fn deviation_test_separates_arms() {
        let m = reference();
        let family = DeviationFamily::standard(&m, 0.5).unwrap().select(&["scaled-merton 2", "asset2-deviation"]).unwrap();
        let c = Contract::closed_form(form(0.5));
        let r = deviation_test(&c, &family, &m, &cfg(), None).unwrap();
        assert!(r.passed(), "{}", r.summary_line());
        let k2 = r.row("scaled-merton 2").unwrap();
        assert!((k2.estimate - (-0.08f64).exp()).abs() < 4.0 * k2.stderr);
    }

    #[test]
    fn fake_contract_pays_control_exactly() {
        let m = reference();
        let family = DeviationFamily::standard(&m, 0.5).unwrap().select(&["zero"]).unwrap();
        let r = deviation_test(&fake_contract(1.0).unwrap(), &family, &m, &cfg(), None).unwrap();
        let control = r.row("control").unwrap();
        assert_eq!((control.estimate, control.stderr), (1.0, 0.0));
        assert!(r.passed());
    }

    #[test]
    fn supermartingale_profiles() {
        let m = reference();
        let f = form(0.5);
        let dev = supermartingale_profile(&f, &scaled_merton(&m, 0.5, 2.0).unwrap(), &m, &[0.5, 1.0], &cfg(), true).unwrap();
        assert!(dev.passed(), "{}", dev.summary_line());
        let last = dev.row("t=1").unwrap();
        assert!((last.estimate - 4.0 * (-0.08f64).exp()).abs() < 4.0 * last.stderr);
        let opt = supermartingale_profile(&f, &merton_strategy(&m, 0.5).unwrap(), &m, &[1.0], &cfg(), true).unwrap();
        assert!(!opt.passed());
        // zero strategy: U_t(1) = 4 e^{-0.08 t} deterministically
        let zero = supermartingale_profile(&f, &FeedbackStrategy::zero(2), &m, &[1.0], &cfg(), true).unwrap();
        let row = zero.row("t=1").unwrap();
        assert!((row.estimate - 4.0 * (-0.08f64).exp()).abs() < 1e-12 && row.stderr < 1e-12);
        assert!(zero.passed());
    }

    #[test]
    fn principal_value_roles() {
        let m = reference();
        let v = principal_value_test(&merton_strategy(&m, 0.5).unwrap(), &m, 0.5, &cfg(), ValueRole::Optimal).unwrap();
        assert!(v.passed(), "{}", v.summary_line());
        let zero = principal_value_test(&FeedbackStrategy::zero(2), &m, 0.5, &cfg(), ValueRole::Comparison).unwrap();
        assert_eq!(zero.rows[0].estimate, 2.0);
        assert_eq!(zero.rows[0].stderr, 0.0);
        assert!(zero.passed());
        let dev = principal_value_test(&asset2_deviation(&m, 0.5, 1.0).unwrap(), &m, 0.5, &cfg(), ValueRole::Comparison).unwrap();
        assert_eq!(dev.rows[0].estimate, f64::NEG_INFINITY);
        assert!(dev.notes[0].contains("constraint violated, J = -inf"));
        let as_optimal = principal_value_test(&asset2_deviation(&m, 0.5, 1.0).unwrap(), &m, 0.5, &cfg(), ValueRole::Optimal).unwrap();
        assert!(!as_optimal.passed());
    }
}
