//! Traded-asset dynamics `d log S = mu_tilde dt + sigma^T dW` and the market
//! price of risk `lambda = (sigma^T)^+ mu`.
//!
//! `mu` is always the drift of `S` itself, `mu_i = mu_tilde_i + |sigma^i|^2 / 2`
//! where `sigma^i` is the i-th column of the `d x k` volatility matrix.

mod assets;
mod brownian;

pub use assets::{asset_path, write_path_csv, AssetPath};
pub(crate) use assets::csv_err;
pub(crate) use brownian::bridge_split;
pub use brownian::{grid_steps, simulate_brownian, BrownianPath};

use std::borrow::Cow;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, ensure_positive, Error, Result};

/// Relative threshold on singular values below which columns of sigma are
/// treated as linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Two-asset Black–Scholes market with correlated log-returns.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlackScholes {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
}

impl BlackScholes {
    pub fn new(mu1: f64, mu2: f64, sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        let p = Self {
            mu1,
            mu2,
            sigma1,
            sigma2,
            rho,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("mu1", self.mu1)?;
        ensure_finite("mu2", self.mu2)?;
        ensure_positive("sigma1", self.sigma1)?;
        ensure_positive("sigma2", self.sigma2)?;
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Domain {
                name: "rho",
                value: self.rho,
                constraint: "|rho| < 1".into(),
            });
        }
        Ok(())
    }

    /// `sqrt(1 - rho^2)`.
    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }

    /// Volatility matrix; column `i` loads asset `i` on the factors.
    pub fn sigma(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                self.sigma1,
                self.sigma2 * self.rho,
                0.0,
                self.sigma2 * self.rho_bar(),
            ],
        )
    }

    pub fn mu(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.mu1, self.mu2])
    }

    /// Market price of risk written out for the triangular 2x2 case.
    pub fn lambda_closed_form(&self) -> [f64; 2] {
        let l1 = self.mu1 / self.sigma1;
        let l2 = (self.mu2 - self.sigma2 * self.rho * self.mu1 / self.sigma1)
            / (self.sigma2 * self.rho_bar());
        [l1, l2]
    }
}

/// Market coefficients at one grid time, with the derived quantities every
/// consumer needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// Drift of the prices, length `k`.
    pub mu: DVector<f64>,
    /// `d x k` volatility matrix.
    pub sigma: DMatrix<f64>,
    /// Market price of risk, length `d`.
    pub lambda: DVector<f64>,
    /// Left inverse `sigma^+ = (sigma^T sigma)^{-1} sigma^T`, `k x d`.
    pub sigma_pinv: DMatrix<f64>,
    /// Projection `(sigma^T)^+ sigma^T` onto the column space of sigma, `d x d`.
    pub projection: DMatrix<f64>,
}

impl Coefficients {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        Self::at_step(mu, sigma, None)
    }

    fn at_step(mu: DVector<f64>, sigma: DMatrix<f64>, step: Option<usize>) -> Result<Self> {
        let gram_inv = gram_inverse(&sigma, step)?;
        if mu.len() != sigma.ncols() {
            return Err(Error::Config(format!(
                "drift has {} entries but sigma has {} columns",
                mu.len(),
                sigma.ncols()
            )));
        }
        let lambda = &sigma * (&gram_inv * &mu);
        let sigma_pinv = &gram_inv * sigma.transpose();
        let projection = &sigma * &sigma_pinv;
        Ok(Self {
            mu,
            sigma,
            lambda,
            sigma_pinv,
            projection,
        })
    }

    pub fn num_assets(&self) -> usize {
        self.sigma.ncols()
    }

    pub fn num_factors(&self) -> usize {
        self.sigma.nrows()
    }

    /// Log-drift `mu_tilde_i = mu_i - |sigma^i|^2/2`.
    pub fn log_drift(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.mu.len(),
            (0..self.mu.len()).map(|i| self.mu[i] - 0.5 * self.sigma.column(i).norm_squared()),
        )
    }

    /// `sigma * pi` for a holdings vector `pi` (length `k`), written into `out` (length `d`).
    pub fn exposure(&self, pi: &[f64], out: &mut [f64]) {
        let (d, k) = self.sigma.shape();
        for (r, o) in out.iter_mut().enumerate().take(d) {
            *o = (0..k).map(|c| self.sigma[(r, c)] * pi[c]).sum();
        }
    }
}

/// `(sigma^T sigma)^{-1}` after screening the singular values of `sigma`.
fn gram_inverse(sigma: &DMatrix<f64>, step: Option<usize>) -> Result<DMatrix<f64>> {
    let (d, k) = sigma.shape();
    if k == 0 || d < k {
        return Err(Error::Config(format!(
            "volatility matrix must be d x k with d >= k >= 1, got {d} x {k}"
        )));
    }
    let sv = sigma.singular_values();
    let max_sv = sv.max();
    let min_sv = sv.min();
    if !(min_sv > RANK_TOLERANCE * max_sv) || !max_sv.is_finite() {
        return Err(Error::CoefficientDegeneracy {
            step,
            min_sv,
            max_sv,
        });
    }
    let gram = sigma.transpose() * sigma;
    gram.cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::CoefficientDegeneracy {
            step,
            min_sv,
            max_sv,
        })
}

/// `lambda = (sigma^T)^+ mu` through the normal equations.
pub fn market_price_of_risk(sigma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<DVector<f64>> {
    Coefficients::new(mu.clone(), sigma.clone()).map(|c| c.lambda)
}

/// Read-only view of a simulated path up to (and including) `step`.
#[derive(Clone, Copy)]
pub struct PathView<'a> {
    pub step: usize,
    pub t: f64,
    pub path: &'a BrownianPath,
}

/// Returns `(mu, sigma)` for the state described by the view.
pub type CoefficientRule = dyn Fn(&PathView<'_>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync;

#[derive(Clone)]
enum Kind {
    BlackScholes(BlackScholes),
    General {
        num_assets: usize,
        num_factors: usize,
        rule: Arc<CoefficientRule>,
    },
}

/// Market model shared by all simulations. Immutable after construction.
#[derive(Clone)]
pub struct MarketParams {
    kind: Kind,
    constant: Option<Arc<Coefficients>>,
}

impl std::fmt::Debug for MarketParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            Kind::BlackScholes(p) => f.debug_tuple("MarketParams::BlackScholes").field(p).finish(),
            Kind::General {
                num_assets,
                num_factors,
                ..
            } => f
                .debug_struct("MarketParams::General")
                .field("num_assets", num_assets)
                .field("num_factors", num_factors)
                .finish(),
        }
    }
}

impl MarketParams {
    pub fn black_scholes(params: BlackScholes) -> Result<Self> {
        params.validate()?;
        let coeffs = Coefficients::new(params.mu(), params.sigma())?;
        Ok(Self {
            kind: Kind::BlackScholes(params),
            constant: Some(Arc::new(coeffs)),
        })
    }

    /// Constant coefficients given directly.
    pub fn constant(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let coeffs = Arc::new(Coefficients::new(mu, sigma)?);
        let (num_factors, num_assets) = coeffs.sigma.shape();
        let c = Arc::clone(&coeffs);
        Ok(Self {
            kind: Kind::General {
                num_assets,
                num_factors,
                rule: Arc::new(move |_: &PathView<'_>| (c.mu.clone(), c.sigma.clone())),
            },
            constant: Some(coeffs),
        })
    }

    /// Coefficients supplied by a rule evaluated on the grid, possibly
    /// depending on the path history.
    pub fn general(num_assets: usize, num_factors: usize, rule: Arc<CoefficientRule>) -> Result<Self> {
        if num_assets == 0 || num_factors < num_assets {
            return Err(Error::Config(format!(
                "need d >= k >= 1, got k = {num_assets}, d = {num_factors}"
            )));
        }
        Ok(Self {
            kind: Kind::General {
                num_assets,
                num_factors,
                rule,
            },
            constant: None,
        })
    }

    pub fn num_assets(&self) -> usize {
        match &self.kind {
            Kind::BlackScholes(_) => 2,
            Kind::General { num_assets, .. } => *num_assets,
        }
    }

    pub fn num_factors(&self) -> usize {
        match &self.kind {
            Kind::BlackScholes(_) => 2,
            Kind::General { num_factors, .. } => *num_factors,
        }
    }

    pub fn as_black_scholes(&self) -> Option<&BlackScholes> {
        match &self.kind {
            Kind::BlackScholes(p) => Some(p),
            Kind::General { .. } => None,
        }
    }

    /// Coefficients that do not depend on time or path, if any.
    pub fn constant_coefficients(&self) -> Option<&Coefficients> {
        self.constant.as_deref()
    }

    /// Coefficients at grid index `step` of `path`.
    pub fn coefficients<'a>(&'a self, step: usize, path: &BrownianPath) -> Result<Cow<'a, Coefficients>> {
        if let Some(c) = &self.constant {
            return Ok(Cow::Borrowed(c));
        }
        let Kind::General {
            num_assets,
            num_factors,
            rule,
        } = &self.kind
        else {
            unreachable!("Black–Scholes markets always carry constant coefficients")
        };
        let view = PathView {
            step,
            t: path.time(step),
            path,
        };
        let (mu, sigma) = rule(&view);
        if sigma.shape() != (*num_factors, *num_assets) {
            return Err(Error::Config(format!(
                "coefficient rule returned a {:?} volatility matrix at time index {step}, expected {:?}",
                sigma.shape(),
                (num_factors, num_assets)
            )));
        }
        Coefficients::at_step(mu, sigma, Some(step)).map(Cow::Owned)
    }

    /// Market price of risk at every grid time of `path`.
    pub fn risk_price(&self, path: &BrownianPath) -> Result<RiskPrice> {
        let lambda = (0..=path.num_steps())
            .map(|i| self.coefficients(i, path).map(|c| c.lambda.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(RiskPrice { lambda })
    }
}

/// Market price of risk along one path, indexed by grid time.
#[derive(Debug, Clone)]
pub struct RiskPrice {
    pub lambda: Vec<DVector<f64>>,
}
