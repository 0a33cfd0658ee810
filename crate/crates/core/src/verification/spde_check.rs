use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::report::{ReportRow, Tolerance, VerificationReport};
use crate::contract::BsClosedForm;
use crate::error::{Error, Result};
use crate::market::{simulate_brownian, MarketParams};
use crate::spde::{integrate_to_u, solve_r, AnchorVol, LogGrid, SolveOptions};
use crate::strategy::merton_strategy;

/// Per-path maximal relative errors of the solver against the closed-form
/// family, over all checked times and grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdeErrors {
    pub seed: u64,
    pub nodes: usize,
    pub dt: f64,
    /// `max |R_num / R - 1|` per path.
    pub r: Vec<f64>,
    /// `max |U_num / U - 1|` per path.
    pub u: Vec<f64>,
    /// `max |a_num - a|_inf / (|lambda| U)` per path.
    pub a: Vec<f64>,
    /// Largest error of `R` at `t = 0` over all paths (shared initial condition).
    pub inception: f64,
    pub runtime: Duration,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn median_of(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

impl SpdeErrors {
    pub fn max_r(&self) -> f64 {
        max_of(&self.r)
    }

    pub fn max_u(&self) -> f64 {
        max_of(&self.u)
    }

    pub fn max_a(&self) -> f64 {
        max_of(&self.a)
    }

    /// Report gating the maximal `R` and `U` errors at `tolerance`, with
    /// medians and the volatility error for information. The inception error
    /// must vanish up to the roundoff of storing `log R`.
    pub fn report(&self, tolerance: f64) -> VerificationReport {
        let mut report = VerificationReport::new("spde_vs_closed_form", self.r.len(), self.seed);
        let gate = Tolerance::LessThan(tolerance);
        report.rows.push(ReportRow::new("R max", self.max_r(), 0.0, tolerance, gate));
        report
            .rows
            .push(ReportRow::new("R median", median_of(&self.r), 0.0, tolerance, Tolerance::Info));
        report.rows.push(ReportRow::new("U max", self.max_u(), 0.0, tolerance, gate));
        report
            .rows
            .push(ReportRow::new("U median", median_of(&self.u), 0.0, tolerance, Tolerance::Info));
        report
            .rows
            .push(ReportRow::new("a max", self.max_a(), 0.0, f64::NAN, Tolerance::Info));
        report
            .rows
            .push(ReportRow::new("inception", self.inception, 0.0, 1e-14, Tolerance::LessThan(1e-14)));
        report.notes.push(format!(
            "{} nodes, dt = {}; relative errors, maximum over checked times and nodes per path",
            self.nodes, self.dt
        ));
        report.runtime = self.runtime;
        report
    }
}

/// Solves the curvature equation for the closed-form family's Merton target
/// on `paths` Brownian paths and measures the relative errors of `R`, `U`
/// and `a` against the analytic field `U_t(x) = Q_t x^{1-eps} / (eps (1-eps))`,
/// every `check_every` grid steps.
///
/// The solver starts from `R_0(x) = x^{-1-eps}`, anchors `U` at `X_0` with
/// `zeta_0 = U_0(X_0)`, and uses the closed-form anchor volatility.
pub fn spde_vs_closed_form(
    form: &BsClosedForm,
    grid: &LogGrid,
    dt: f64,
    paths: usize,
    seed: u64,
    check_every: usize,
) -> Result<SpdeErrors> {
    let clock = Instant::now();
    if paths == 0 {
        return Err(Error::Config("at least one path is required".into()));
    }
    let market = MarketParams::black_scholes(form.market)?;
    let strategy = merton_strategy(&market, form.gamma)?;
    let eps = form.epsilon;
    let shape = *form;
    let r0 = move |x: f64| shape.curvature(1.0, x);
    let x_bar = form.x0;
    let zeta0 = form.utility(1.0, x_bar);
    let anchor = AnchorVol::ClosedForm { epsilon: eps };
    let options = SolveOptions {
        keep_every: check_every,
        probes: vec![x_bar],
    };
    let lambda_norm = form.lambda().iter().map(|l| l * l).sum::<f64>().sqrt();
    let xs: Vec<f64> = grid.nodes().iter().map(|z| z.exp()).collect();

    let per_path = (0..paths as u64)
        .into_par_iter()
        .map(|i| -> Result<[f64; 4]> {
            let path = simulate_brownian(2, form.horizon, dt, seed, i)?;
            let solution = solve_r(&strategy, &market, &r0, &path, grid, &options)?;
            let mut field = integrate_to_u(&solution, &strategy, &market, &path, x_bar, zeta0, &anchor)?;
            field.attach_volatility(&strategy, &market, &path)?;
            let mut worst = [0.0f64; 4];
            for snap in field.snapshots() {
                let q = form.q(snap.t, path.level(snap.step));
                let a_num = snap.a.as_deref().unwrap_or_default();
                let (mut er, mut eu, mut ea) = (0.0f64, 0.0f64, 0.0f64);
                for (node, &x) in xs.iter().enumerate() {
                    let r = form.curvature(q, x);
                    let u = form.utility(q, x);
                    er = er.max((snap.r[node] / r - 1.0).abs());
                    eu = eu.max((snap.u[node] / u - 1.0).abs());
                    let a = form.volatility(q, x);
                    let scale = lambda_norm.max(f64::MIN_POSITIVE) * u.abs();
                    for (k, ak) in a.iter().enumerate() {
                        ea = ea.max((a_num[node * 2 + k] - ak).abs() / scale);
                    }
                }
                if snap.step == 0 {
                    worst[3] = er;
                }
                worst[0] = worst[0].max(er);
                worst[1] = worst[1].max(eu);
                worst[2] = worst[2].max(ea);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SpdeErrors {
        seed,
        nodes: grid.len(),
        dt,
        r: per_path.iter().map(|w| w[0]).collect(),
        u: per_path.iter().map(|w| w[1]).collect(),
        a: per_path.iter().map(|w| w[2]).collect(),
        inception: per_path.iter().map(|w| w[3]).fold(0.0, f64::max),
        runtime: clock.elapsed(),
    })
}
