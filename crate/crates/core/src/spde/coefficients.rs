use super::LogGrid;
use crate::error::{Error, Result};
use crate::market::{BrownianPath, Coefficients, MarketParams};
use crate::strategy::{FeedbackStrategy, StrategyContext};

/// Nodal coefficients of the equation for `Y = log R~` at one time.
///
/// With `b(z) = e^{-z} sigma pi(e^z)`, `beta = |b|^2` and
/// `c = lambda + b + b'`, the equation reads
///
/// ```text
/// dY = [ 1/2 beta Y'' + 1/2 (beta' + beta - 2 lambda.b) Y'
///        + 1/2 (beta'' + 3 beta' + 2 beta - |c|^2) ] dt - (b Y' + c) . dW
/// ```
///
/// Vectors over factors are stored node-major: entry `(i, r)` at `i * d + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogCoefficients {
    pub num_factors: usize,
    pub lambda: Vec<f64>,
    pub b: Vec<f64>,
    pub db: Vec<f64>,
    pub d2b: Vec<f64>,
    pub beta: Vec<f64>,
    pub dbeta: Vec<f64>,
    pub d2beta: Vec<f64>,
    /// `1/2 beta`.
    pub diffusion: Vec<f64>,
    /// `1/2 (beta' + beta - 2 lambda.b)`.
    pub advection: Vec<f64>,
    /// `1/2 (beta'' + 3 beta' + 2 beta - |c|^2)`.
    pub source: Vec<f64>,
    /// `c = lambda + b + b'`.
    pub noise: Vec<f64>,
}

impl LogCoefficients {
    pub fn num_nodes(&self) -> usize {
        self.beta.len()
    }

    pub fn b_at(&self, node: usize) -> &[f64] {
        &self.b[node * self.num_factors..(node + 1) * self.num_factors]
    }

    pub fn noise_at(&self, node: usize) -> &[f64] {
        &self.noise[node * self.num_factors..(node + 1) * self.num_factors]
    }

    /// Drift coefficients `(second, first, zeroth)` of the linear equation for
    /// `R~ = e^Y` itself:
    /// `1/2 [ (d+1)(beta d R~) + (d+2)(beta) d R~ + (d^2 + 3d + 2)(beta) R~ ]`,
    /// i.e. `1/2 beta`, `1/2 (2 beta' + 3 beta)`, `1/2 (beta'' + 3 beta' + 2 beta)`.
    pub fn r_tilde_drift(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.num_nodes();
        let second = self.diffusion.clone();
        let first = (0..n)
            .map(|i| 0.5 * (2.0 * self.dbeta[i] + 3.0 * self.beta[i]))
            .collect();
        let zeroth = (0..n)
            .map(|i| 0.5 * (self.d2beta[i] + 3.0 * self.dbeta[i] + 2.0 * self.beta[i]))
            .collect();
        (second, first, zeroth)
    }

    /// Largest explicit step allowed by the stability rule
    /// `dt <= min(0.25 dz^2 / max beta, 0.5 dz / max |advection|)`.
    pub fn stable_dt(&self, dz: f64) -> f64 {
        let max_beta = self.beta.iter().fold(0.0f64, |m, v| m.max(*v));
        let max_adv = self.advection.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diffusive = if max_beta > 0.0 { 0.25 * dz * dz / max_beta } else { f64::INFINITY };
        let advective = if max_adv > 0.0 { 0.5 * dz / max_adv } else { f64::INFINITY };
        diffusive.min(advective)
    }

    /// All-zero coefficients (null strategy, null market price of risk).
    pub fn is_zero(&self) -> bool {
        [&self.b, &self.db, &self.d2b, &self.lambda, &self.source, &self.advection]
            .iter()
            .all(|v| v.iter().all(|x| *x == 0.0))
    }
}

/// Assembles the `Y` coefficients for `strategy` at grid index `step` of `path`.
pub fn build_log_coefficients(
    strategy: &FeedbackStrategy,
    market: &MarketParams,
    path: &BrownianPath,
    step: usize,
    grid: &LogGrid,
) -> Result<LogCoefficients> {
    let coeffs = market.coefficients(step, path)?;
    let ctx = StrategyContext::on_path(path, step);
    log_coefficients_from(strategy, &coeffs, &ctx, grid)
}

pub(crate) fn log_coefficients_from(
    strategy: &FeedbackStrategy,
    coeffs: &Coefficients,
    ctx: &StrategyContext<'_>,
    grid: &LogGrid,
) -> Result<LogCoefficients> {
    let d = coeffs.num_factors();
    let k = coeffs.num_assets();
    if strategy.num_assets() != k {
        return Err(Error::Config(format!(
            "strategy `{}` trades {} assets, market has {k}",
            strategy.label(),
            strategy.num_assets()
        )));
    }
    let nodes = grid.nodes();
    let m = nodes.len();
    let scaled = strategy.scaled_derivatives_on_grid(ctx, &nodes, grid.dz(), 2);
    let expose = |s: &[f64]| {
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            coeffs.exposure(&s[i * k..(i + 1) * k], &mut out[i * d..(i + 1) * d]);
        }
        out
    };
    let b = expose(&scaled[0]);
    let db = expose(&scaled[1]);
    let d2b = expose(&scaled[2]);
    let lambda: Vec<f64> = coeffs.lambda.iter().copied().collect();

    let dot = |x: &[f64], i: usize, y: &[f64], j: usize| -> f64 { (0..d).map(|r| x[i * d + r] * y[j * d + r]).sum() };
    let mut beta = vec![0.0; m];
    let mut dbeta = vec![0.0; m];
    let mut d2beta = vec![0.0; m];
    let mut diffusion = vec![0.0; m];
    let mut advection = vec![0.0; m];
    let mut source = vec![0.0; m];
    let mut noise = vec![0.0; m * d];
    for i in 0..m {
        beta[i] = dot(&b, i, &b, i);
        dbeta[i] = 2.0 * dot(&b, i, &db, i);
        d2beta[i] = 2.0 * (dot(&db, i, &db, i) + dot(&b, i, &d2b, i));
        let lambda_b: f64 = (0..d).map(|r| lambda[r] * b[i * d + r]).sum();
        let mut c2 = 0.0;
        for r in 0..d {
            let c = lambda[r] + b[i * d + r] + db[i * d + r];
            noise[i * d + r] = c;
            c2 += c * c;
        }
        diffusion[i] = 0.5 * beta[i];
        advection[i] = 0.5 * (dbeta[i] + beta[i] - 2.0 * lambda_b);
        source[i] = 0.5 * (d2beta[i] + 3.0 * dbeta[i] + 2.0 * beta[i] - c2);

        let z = nodes[i];
        for (term, value) in [
            ("diffusion", diffusion[i]),
            ("advection", advection[i]),
            ("source", source[i]),
            ("noise", c2),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFiniteCoefficient { term, node: i, z });
            }
        }
    }
    Ok(LogCoefficients {
        num_factors: d,
        lambda,
        b,
        db,
        d2b,
        beta,
        dbeta,
        d2beta,
        diffusion,
        advection,
        source,
        noise,
    })
}
