use std::io::Write;

use super::{BrownianPath, MarketParams};
use crate::error::{Error, Result};

/// Price trajectories of the `k` traded assets on the path's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetPath {
    num_assets: usize,
    /// `(num_steps + 1) x k`, row-major.
    prices: Vec<f64>,
}

impl AssetPath {
    pub fn num_assets(&self) -> usize {
        self.num_assets
    }

    pub fn num_steps(&self) -> usize {
        self.prices.len() / self.num_assets - 1
    }

    pub fn prices(&self, step: usize) -> &[f64] {
        &self.prices[step * self.num_assets..(step + 1) * self.num_assets]
    }

    /// `S_t / S_0`, entry-wise.
    pub fn ratios(&self, step: usize) -> Vec<f64> {
        self.prices(step)
            .iter()
            .zip(self.prices(0))
            .map(|(s, s0)| s / s0)
            .collect()
    }
}

/// Exact log-Euler scheme: `log S` moves by `mu_tilde dt + sigma^T dW` over
/// each step, coefficients frozen at the left end point.
pub fn asset_path(path: &BrownianPath, market: &MarketParams, s0: &[f64]) -> Result<AssetPath> {
    let k = market.num_assets();
    if s0.len() != k || s0.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config(format!(
            "need {k} strictly positive initial prices, got {s0:?}"
        )));
    }
    if path.dim() != market.num_factors() {
        return Err(Error::Config(format!(
            "path has {} factors, market has {}",
            path.dim(),
            market.num_factors()
        )));
    }
    let n = path.num_steps();
    let dt = path.dt();
    let mut log_s: Vec<f64> = s0.iter().map(|s| s.ln()).collect();
    let mut prices = Vec::with_capacity((n + 1) * k);
    prices.extend_from_slice(s0);
    for i in 0..n {
        let c = market.coefficients(i, path)?;
        let drift = c.log_drift();
        let dw = path.increment(i);
        for (a, ls) in log_s.iter_mut().enumerate() {
            let shock: f64 = (0..dw.len()).map(|r| c.sigma[(r, a)] * dw[r]).sum();
            *ls += drift[a] * dt + shock;
        }
        prices.extend(log_s.iter().map(|l| l.exp()));
    }
    Ok(AssetPath {
        num_assets: k,
        prices,
    })
}

/// CSV dump with columns `t, W1..Wd, S1..Sk`.
pub fn write_path_csv<W: Write>(out: W, path: &BrownianPath, assets: &AssetPath) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=path.dim()).map(|j| format!("W{j}")));
    header.extend((1..=assets.num_assets()).map(|j| format!("S{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..=path.num_steps() {
        let mut row = vec![path.time(i).to_string()];
        row.extend(path.level(i).iter().map(|v| v.to_string()));
        row.extend(assets.prices(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
