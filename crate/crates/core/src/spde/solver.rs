use super::coefficients::log_coefficients_from;
use super::{LogCoefficients, LogGrid};
use crate::error::{Error, Result};
use crate::market::bridge_split;
use crate::market::{BrownianPath, MarketParams};
use crate::rng::{derive_seed, stream_rng};
use crate::strategy::{FeedbackStrategy, StrategyContext};

/// Tag separating the sub-step bridge streams from every other stream.
const BRIDGE_TAG: u64 = 0x5944_4552;

/// Applies the drift operator at interior nodes.
fn drift(y: &[f64], c: &LogCoefficients, dz: f64, out: &mut [f64]) {
    let m = y.len();
    let inv2 = 1.0 / (dz * dz);
    let inv1 = 0.5 / dz;
    for i in 1..m - 1 {
        let d2 = (y[i + 1] - 2.0 * y[i] + y[i - 1]) * inv2;
        let d1 = (y[i + 1] - y[i - 1]) * inv1;
        out[i] = c.diffusion[i] * d2 + c.advection[i] * d1 + c.source[i];
    }
}

/// Applies `-(b Y' + c) . dW` at interior nodes.
fn noise(y: &[f64], c: &LogCoefficients, dz: f64, dw: &[f64], out: &mut [f64]) {
    let m = y.len();
    let d = c.num_factors;
    let inv1 = 0.5 / dz;
    for i in 1..m - 1 {
        let d1 = (y[i + 1] - y[i - 1]) * inv1;
        let mut acc = 0.0;
        for r in 0..d {
            acc += (c.b[i * d + r] * d1 + c.noise[i * d + r]) * dw[r];
        }
        out[i] = -acc;
    }
}

/// Zero second derivative at both ends.
fn close_boundary(y: &mut [f64]) {
    let m = y.len();
    y[0] = 2.0 * y[1] - y[2];
    y[m - 1] = 2.0 * y[m - 2] - y[m - 3];
}

/// One explicit step of the `Y` equation.
///
/// The drift uses a Heun predictor–corrector with central differences; the
/// noise term uses central differences evaluated at the start of the step.
/// Both end nodes are closed by linear extrapolation. Refuses steps above
/// [`LogCoefficients::stable_dt`].
pub fn step_y(y: &[f64], coeffs: &LogCoefficients, dz: f64, dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
    let m = y.len();
    if m != coeffs.num_nodes() || m < 3 {
        return Err(Error::GridMismatch(format!(
            "{m} nodal values against {} coefficient nodes",
            coeffs.num_nodes()
        )));
    }
    if dw.len() != coeffs.num_factors {
        return Err(Error::GridMismatch(format!(
            "increment of dimension {} for {} factors",
            dw.len(),
            coeffs.num_factors
        )));
    }
    let required = coeffs.stable_dt(dz);
    if dt > required * (1.0 + 1e-12) {
        return Err(Error::Stability { dt, required });
    }
    let mut f0 = vec![0.0; m];
    let mut g0 = vec![0.0; m];
    drift(y, coeffs, dz, &mut f0);
    noise(y, coeffs, dz, dw, &mut g0);
    let mut pred: Vec<f64> = (0..m).map(|i| y[i] + f0[i] * dt + g0[i]).collect();
    close_boundary(&mut pred);
    let mut f1 = vec![0.0; m];
    drift(&pred, coeffs, dz, &mut f1);
    let mut next: Vec<f64> = (0..m)
        .map(|i| y[i] + 0.5 * (f0[i] + f1[i]) * dt + g0[i])
        .collect();
    close_boundary(&mut next);
    Ok(next)
}

/// Options for [`solve_r`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Keep the full nodal field every `keep_every` grid steps (the final
    /// step is always kept).
    pub keep_every: usize,
    /// Points `x` at which `log R` is recorded at every grid step.
    pub probes: Vec<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            keep_every: 1,
            probes: vec![1.0],
        }
    }
}

/// Pathwise solution of the curvature equation.
#[derive(Debug, Clone, PartialEq)]
pub struct RSolution {
    grid: LogGrid,
    dt: f64,
    num_steps: usize,
    /// `(grid index, Y)` for every kept time.
    kept: Vec<(usize, Vec<f64>)>,
    probes: Vec<f64>,
    /// `probe_log_r[p][i]` is `Y_{t_i}(log probes[p])`.
    probe_log_r: Vec<Vec<f64>>,
    max_substeps: usize,
}

impl RSolution {
    pub fn grid(&self) -> &LogGrid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Kept grid indices in increasing order.
    pub fn kept_steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.kept.iter().map(|(s, _)| *s)
    }

    /// `Y = log R~` at a kept grid index.
    pub fn log_r(&self, step: usize) -> Option<&[f64]> {
        self.kept
            .binary_search_by_key(&step, |(s, _)| *s)
            .ok()
            .map(|i| self.kept[i].1.as_slice())
    }

    /// `R~ = R(e^z)` at a kept grid index.
    pub fn r(&self, step: usize) -> Option<Vec<f64>> {
        self.log_r(step).map(|y| y.iter().map(|v| v.exp()).collect())
    }

    pub fn terminal_log_r(&self) -> &[f64] {
        &self.kept.last().expect("the terminal time is always kept").1
    }

    /// `R_{t_i}(x)` at every grid index for a probe point `x`.
    pub fn probe(&self, x: f64) -> Option<Vec<f64>> {
        self.probes
            .iter()
            .position(|p| *p == x)
            .map(|i| self.probe_log_r[i].iter().map(|v| v.exp()).collect())
    }

    /// Largest number of sub-steps taken inside one grid step.
    pub fn max_substeps(&self) -> usize {
        self.max_substeps
    }
}

/// Solves for `R` along `path`, starting from `R_0 = r0`.
///
/// Each grid step is split into the fewest equal sub-steps meeting the
/// stability rule; the Brownian increment is refined into sub-increments by
/// a Brownian bridge pinned to it, drawn from a stream derived from the
/// path's seed and index. Coefficients are frozen over a grid step and, for
/// proportional strategies in constant markets, computed once.
pub fn solve_r(
    strategy: &FeedbackStrategy,
    market: &MarketParams,
    r0: &dyn Fn(f64) -> f64,
    path: &BrownianPath,
    grid: &LogGrid,
    options: &SolveOptions,
) -> Result<RSolution> {
    if options.keep_every == 0 {
        return Err(Error::Config("keep_every must be at least 1".into()));
    }
    if path.dim() != market.num_factors() {
        return Err(Error::GridMismatch(format!(
            "path has {} factors, market has {}",
            path.dim(),
            market.num_factors()
        )));
    }
    let probe_z = options
        .probes
        .iter()
        .map(|&x| grid.check_interior(x))
        .collect::<Result<Vec<_>>>()?;

    let nodes = grid.nodes();
    let mut y = Vec::with_capacity(nodes.len());
    for (i, &z) in nodes.iter().enumerate() {
        let r = r0(z.exp());
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain {
                name: "initial curvature R0",
                value: r,
                constraint: format!("R0 > 0 and finite at every node (node {i}, z = {z})"),
            });
        }
        y.push(r.ln());
    }

    let n = path.num_steps();
    let dz = grid.dz();
    let dt = path.dt();
    let frozen = strategy.proportions().is_some() && market.constant_coefficients().is_some();
    let mut cached: Option<LogCoefficients> = None;
    let mut kept = vec![(0, y.clone())];
    let mut probe_log_r: Vec<Vec<f64>> = probe_z
        .iter()
        .map(|&z| {
            let mut v = Vec::with_capacity(n + 1);
            v.push(grid.interpolate(&y, z));
            v
        })
        .collect();
    let mut max_substeps = 1;
    let mut sub_increments = Vec::new();

    for i in 0..n {
        if cached.is_none() || !frozen {
            let mc = market.coefficients(i, path)?;
            cached = Some(log_coefficients_from(strategy, &mc, &StrategyContext::on_path(path, i), grid)?);
        }
        let coeffs = cached.as_ref().expect("coefficients computed above");
        let parts = (dt / coeffs.stable_dt(dz)).ceil().max(1.0) as usize;
        max_substeps = max_substeps.max(parts);
        let h = dt / parts as f64;
        let dw = path.increment(i);
        if parts == 1 {
            y = step_y(&y, coeffs, dz, h, dw)?;
        } else {
            let seed = derive_seed(path.seed(), &[BRIDGE_TAG, path.index(), i as u64]);
            let mut rng = stream_rng(seed, 0);
            bridge_split(dw, dt, parts, &mut rng, &mut sub_increments);
            let d = dw.len();
            for p in 0..parts {
                y = step_y(&y, coeffs, dz, h, &sub_increments[p * d..(p + 1) * d])?;
            }
        }
        let step = i + 1;
        for (log_r, &z) in probe_log_r.iter_mut().zip(&probe_z) {
            log_r.push(grid.interpolate(&y, z));
        }
        if step % options.keep_every == 0 || step == n {
            kept.push((step, y.clone()));
        }
    }
    Ok(RSolution {
        grid: *grid,
        dt,
        num_steps: n,
        kept,
        probes: options.probes.clone(),
        probe_log_r,
        max_substeps,
    })
}
