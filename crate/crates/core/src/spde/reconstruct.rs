use std::fmt;
use std::io::Write;
use std::sync::Arc;

use super::grid::{cumulative, cumulative_at};
use super::{LogGrid, RSolution};
use crate::error::{ensure_epsilon, ensure_finite, Error, Result};
use crate::market::{csv_err, BrownianPath, Coefficients, MarketParams};
use crate::strategy::{differentiate_nodal, FeedbackStrategy, HoldingsRule, StrategyContext};

/// State handed to a custom anchor-volatility rule.
pub struct AnchorState<'a> {
    pub step: usize,
    pub t: f64,
    pub x_bar: f64,
    /// `R_t(x_bar)`.
    pub r_at_anchor: f64,
    /// `sigma_t pi_t(x_bar)`.
    pub exposure: &'a [f64],
    pub lambda: &'a [f64],
    pub path: &'a BrownianPath,
}

pub type AnchorRule = dyn Fn(&AnchorState<'_>) -> Vec<f64> + Send + Sync;

/// Choice of the free volatility `a_t(x_bar)` at the anchor point.
#[derive(Clone, Default)]
pub enum AnchorVol {
    #[default]
    Zero,
    /// `a_t(x_bar) = -(lambda x_bar - eps sigma pi(x_bar)) R_t(x_bar) x_bar / (eps (1 - eps))`,
    /// which keeps the power family `U = Q x^{1-eps} / (eps (1 - eps))` in closed form.
    ClosedForm { epsilon: f64 },
    Custom(Arc<AnchorRule>),
}

impl fmt::Debug for AnchorVol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("Zero"),
            Self::ClosedForm { epsilon } => f.debug_struct("ClosedForm").field("epsilon", epsilon).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl AnchorVol {
    fn evaluate(&self, state: &AnchorState<'_>) -> Result<Vec<f64>> {
        let d = state.lambda.len();
        let a = match self {
            Self::Zero => vec![0.0; d],
            Self::ClosedForm { epsilon } => {
                let e = *epsilon;
                let scale = state.r_at_anchor * state.x_bar / (e * (1.0 - e));
                (0..d)
                    .map(|r| -(state.lambda[r] * state.x_bar - e * state.exposure[r]) * scale)
                    .collect()
            }
            Self::Custom(rule) => rule(state),
        };
        if a.len() != d {
            return Err(Error::Config(format!(
                "anchor volatility has {} entries, expected {d}",
                a.len()
            )));
        }
        for &v in &a {
            ensure_finite("anchor volatility", v)?;
        }
        Ok(a)
    }
}

/// Reconstructed fields at one grid time. Nodal arrays are indexed by the
/// nodes of the log-grid; `a` is node-major with `d` entries per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub step: usize,
    pub t: f64,
    pub zeta: f64,
    /// `log R~`.
    pub y: Vec<f64>,
    /// `R~(z) = R(e^z)`.
    pub r: Vec<f64>,
    /// `V(e^z) = int_{e^z}^inf R`.
    pub v: Vec<f64>,
    /// `U(e^z)`.
    pub u: Vec<f64>,
    pub a: Option<Vec<f64>>,
}

/// `U`, `V`, `R` (and optionally `a`) along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityField {
    grid: LogGrid,
    x_bar: f64,
    dt: f64,
    num_factors: usize,
    zeta: Vec<f64>,
    anchor_vol: Vec<f64>,
    snapshots: Vec<FieldSnapshot>,
}

impl UtilityField {
    pub fn grid(&self) -> &LogGrid {
        &self.grid
    }

    pub fn x_bar(&self) -> f64 {
        self.x_bar
    }

    pub fn num_factors(&self) -> usize {
        self.num_factors
    }

    pub fn num_steps(&self) -> usize {
        self.zeta.len() - 1
    }

    /// `zeta_{t_i} = U_{t_i}(x_bar)` for every grid index.
    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    /// `a_{t_i}(x_bar)`.
    pub fn anchor_vol(&self, step: usize) -> &[f64] {
        &self.anchor_vol[step * self.num_factors..(step + 1) * self.num_factors]
    }

    pub fn snapshots(&self) -> &[FieldSnapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, step: usize) -> Option<&FieldSnapshot> {
        self.snapshots
            .binary_search_by_key(&step, |s| s.step)
            .ok()
            .map(|i| &self.snapshots[i])
    }

    pub fn initial(&self) -> &FieldSnapshot {
        &self.snapshots[0]
    }

    pub fn terminal(&self) -> &FieldSnapshot {
        self.snapshots.last().expect("the terminal time is always kept")
    }

    /// `U_t(x)` for any `x` inside the grid, integrating the piecewise-linear
    /// interpolant of `V` exactly from the anchor (so `U_t(x_bar) = zeta_t`).
    pub fn u_at(&self, snapshot: &FieldSnapshot, x: f64) -> Result<f64> {
        let z = self.grid.check_interior(x).or_else(|e| {
            if x > 0.0 && (x.ln() == self.grid.z_min() || x.ln() == self.grid.z_max()) {
                Ok(x.ln())
            } else {
                Err(e)
            }
        })?;
        let g = dz_weighted(&self.grid, &snapshot.v, 1.0);
        let cum = cumulative(&g, self.grid.dz());
        let z_bar = self.x_bar.ln();
        Ok(snapshot.zeta + (cumulative_at(&self.grid, &g, &cum, z) - cumulative_at(&self.grid, &g, &cum, z_bar)))
    }

    /// `R_t(x)` by interpolating `log R~` linearly.
    pub fn r_at(&self, snapshot: &FieldSnapshot, x: f64) -> Result<f64> {
        let z = self.grid.check_interior(x)?;
        Ok(self.grid.interpolate(&snapshot.y, z).exp())
    }

    /// Computes `a` for every snapshot; see [`volatility_a`].
    pub fn attach_volatility(
        &mut self,
        strategy: &FeedbackStrategy,
        market: &MarketParams,
        path: &BrownianPath,
    ) -> Result<()> {
        for i in 0..self.snapshots.len() {
            let a = volatility_a(self, &self.snapshots[i], strategy, market, path)?;
            self.snapshots[i].a = Some(a);
        }
        Ok(())
    }
}

/// `f(z) e^{power z}` nodewise.
fn dz_weighted(grid: &LogGrid, f: &[f64], power: f64) -> Vec<f64> {
    f.iter()
        .enumerate()
        .map(|(i, v)| v * (power * grid.z(i)).exp())
        .collect()
}

/// `sigma_t pi_t(e^z)` at every node, node-major.
fn nodal_exposure(
    strategy: &FeedbackStrategy,
    coeffs: &Coefficients,
    ctx: &StrategyContext<'_>,
    grid: &LogGrid,
) -> Vec<f64> {
    let d = coeffs.num_factors();
    let mut pi = vec![0.0; coeffs.num_assets()];
    let mut out = vec![0.0; grid.len() * d];
    for i in 0..grid.len() {
        strategy.holdings(ctx, grid.z(i).exp(), &mut pi);
        coeffs.exposure(&pi, &mut out[i * d..(i + 1) * d]);
    }
    out
}

/// Builds `U_t(x) = zeta_t + int_{x_bar}^x V_t` from a solved `R`.
///
/// `V_t(x) = int_x^inf R_t` by the trapezoid rule in `z` plus the tail
/// `R(x_max) x_max / s`, where `-(1 + s)` is the boundary log-slope of `R`;
/// `zeta` follows `d zeta = -1/2 |sigma pi(x_bar)|^2 R_t(x_bar) dt + a_t(x_bar) . dW`
/// by Euler steps on the path's grid. `x_bar` must be one of the solution's probes.
pub fn integrate_to_u(
    solution: &RSolution,
    strategy: &FeedbackStrategy,
    market: &MarketParams,
    path: &BrownianPath,
    x_bar: f64,
    zeta0: f64,
    anchor: &AnchorVol,
) -> Result<UtilityField> {
    ensure_finite("zeta0", zeta0)?;
    if let AnchorVol::ClosedForm { epsilon } = anchor {
        ensure_epsilon(*epsilon)?;
    }
    let grid = *solution.grid();
    grid.check_interior(x_bar)?;
    if solution.num_steps() != path.num_steps() || solution.dt() != path.dt() {
        return Err(Error::GridMismatch("solution and path use different time grids".into()));
    }
    let r_anchor = solution.probe(x_bar).ok_or_else(|| {
        Error::Config(format!("the anchor x = {x_bar} was not recorded as a probe by the solver"))
    })?;
    let n = path.num_steps();
    let d = market.num_factors();
    let dt = path.dt();

    let mut zeta = Vec::with_capacity(n + 1);
    let mut anchor_vol = Vec::with_capacity((n + 1) * d);
    let mut pi = vec![0.0; market.num_assets()];
    let mut exposure = vec![0.0; d];
    zeta.push(zeta0);
    for i in 0..=n {
        let coeffs = market.coefficients(i, path)?;
        strategy.holdings(&StrategyContext::on_path(path, i), x_bar, &mut pi);
        coeffs.exposure(&pi, &mut exposure);
        let lambda: Vec<f64> = coeffs.lambda.iter().copied().collect();
        let a = anchor.evaluate(&AnchorState {
            step: i,
            t: path.time(i),
            x_bar,
            r_at_anchor: r_anchor[i],
            exposure: &exposure,
            lambda: &lambda,
            path,
        })?;
        if i < n {
            let dw = path.increment(i);
            let e2: f64 = exposure.iter().map(|v| v * v).sum();
            let shock: f64 = a.iter().zip(dw).map(|(x, y)| x * y).sum();
            zeta.push(zeta[i] - 0.5 * e2 * r_anchor[i] * dt + shock);
        }
        anchor_vol.extend(a);
    }

    let dz = grid.dz();
    let m = grid.len();
    let z_bar = x_bar.ln();
    let mut snapshots = Vec::new();
    for step in solution.kept_steps() {
        let y = solution.log_r(step).expect("kept step").to_vec();
        let slope = (y[m - 1] - y[m - 2]) / dz;
        let s = -slope - 1.0;
        if !(s > 0.0) {
            return Err(Error::Integrability { slope });
        }
        let r: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let h = dz_weighted(&grid, &r, 1.0);
        let mut v = vec![0.0; m];
        v[m - 1] = h[m - 1] / s;
        for i in (0..m - 1).rev() {
            v[i] = v[i + 1] + 0.5 * dz * (h[i] + h[i + 1]);
        }
        let g = dz_weighted(&grid, &v, 1.0);
        let cum = cumulative(&g, dz);
        let offset = cumulative_at(&grid, &g, &cum, z_bar);
        let z = zeta[step];
        let u = cum.iter().map(|c| z + (c - offset)).collect();
        snapshots.push(FieldSnapshot {
            step,
            t: path.time(step),
            zeta: z,
            y,
            r,
            v,
            u,
            a: None,
        });
    }
    Ok(UtilityField {
        grid,
        x_bar,
        dt,
        num_factors: d,
        zeta,
        anchor_vol,
        snapshots,
    })
}

/// `a_t(x) = a_t(x_bar) - lambda_t (U_t(x) - U_t(x_bar)) + int_{x_bar}^x sigma_t pi_t(y) R_t(y) dy`
/// at the nodes, for one snapshot of `field`.
pub fn volatility_a(
    field: &UtilityField,
    snapshot: &FieldSnapshot,
    strategy: &FeedbackStrategy,
    market: &MarketParams,
    path: &BrownianPath,
) -> Result<Vec<f64>> {
    let grid = field.grid();
    if snapshot.u.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "snapshot has {} nodes, grid has {}",
            snapshot.u.len(),
            grid.len()
        )));
    }
    let coeffs = market.coefficients(snapshot.step, path)?;
    let d = coeffs.num_factors();
    let m = grid.len();
    let ctx = StrategyContext::on_path(path, snapshot.step);
    let exposure = nodal_exposure(strategy, &coeffs, &ctx, grid);
    let z_bar = field.x_bar().ln();
    let a_bar = field.anchor_vol(snapshot.step);
    let mut a = vec![0.0; m * d];
    for r in 0..d {
        // sigma pi(e^z) R(e^z) e^z
        let w: Vec<f64> = (0..m)
            .map(|i| exposure[i * d + r] * snapshot.r[i] * grid.z(i).exp())
            .collect();
        let cum = cumulative(&w, grid.dz());
        let offset = cumulative_at(grid, &w, &cum, z_bar);
        for i in 0..m {
            a[i * d + r] = a_bar[r] - coeffs.lambda[r] * (snapshot.u[i] - snapshot.zeta) + (cum[i] - offset);
        }
    }
    Ok(a)
}

/// Holdings recovered from `(U, a)` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredStrategy {
    grid: LogGrid,
    num_assets: usize,
    num_factors: usize,
    /// `pi(e^z)`, node-major.
    holdings: Vec<f64>,
    /// `sigma pi(e^z)` before projection, node-major.
    exposure: Vec<f64>,
    /// Relative residual of `sigma pi U'' + lambda U' + P a' = 0` per node.
    residual: Vec<f64>,
}

impl RecoveredStrategy {
    pub fn grid(&self) -> &LogGrid {
        &self.grid
    }

    pub fn holdings_at(&self, node: usize) -> &[f64] {
        &self.holdings[node * self.num_assets..(node + 1) * self.num_assets]
    }

    pub fn exposure_at(&self, node: usize) -> &[f64] {
        &self.exposure[node * self.num_factors..(node + 1) * self.num_factors]
    }

    /// `pi^j(x) / x` at every node.
    pub fn proportions(&self, asset: usize) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| self.holdings[i * self.num_assets + asset] / self.grid.z(i).exp())
            .collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, v| m.max(*v))
    }

    /// The recovered field as a strategy: `pi(x)/x` interpolated linearly in
    /// `log x` and held constant outside the grid.
    pub fn into_strategy(self, label: impl Into<String>) -> FeedbackStrategy {
        let k = self.num_assets;
        let grid = self.grid;
        let props: Vec<Vec<f64>> = (0..k).map(|j| self.proportions(j)).collect();
        let rule: Arc<HoldingsRule> = Arc::new(move |_, x, out| {
            let z = x.ln().clamp(grid.z_min(), grid.z_max());
            for j in 0..k {
                out[j] = x * grid.interpolate(&props[j], z);
            }
        });
        FeedbackStrategy::field(label, k, rule)
    }
}

/// `sigma pi = -(lambda U_x + P a_x) / U_xx` with `U_x = V`, `U_xx = -R` and
/// `a_x = e^{-z} d a / dz` by central differences, then `pi = sigma^+ (sigma pi)`.
pub fn recover_strategy(field: &UtilityField, snapshot: &FieldSnapshot, coeffs: &Coefficients) -> Result<RecoveredStrategy> {
    let grid = *field.grid();
    let a = snapshot
        .a
        .as_ref()
        .ok_or_else(|| Error::Config("volatility field not computed for this snapshot".into()))?;
    let d = coeffs.num_factors();
    let k = coeffs.num_assets();
    let m = grid.len();
    if a.len() != m * d {
        return Err(Error::GridMismatch(format!("volatility field has {} entries, expected {}", a.len(), m * d)));
    }
    let da = differentiate_nodal(a, d, grid.dz());
    let mut holdings = vec![0.0; m * k];
    let mut exposure = vec![0.0; m * d];
    let mut residual = vec![0.0; m];
    let mut ax = vec![0.0; d];
    for i in 0..m {
        let x = grid.z(i).exp();
        let uxx = -snapshot.r[i];
        if !(uxx < 0.0) || !uxx.is_finite() {
            return Err(Error::Singularity { node: i, x, value: uxx });
        }
        let ux = snapshot.v[i];
        for r in 0..d {
            ax[r] = da[i * d + r] / x;
        }
        let mut scale = 0.0f64;
        for r in 0..d {
            let pa: f64 = (0..d).map(|c| coeffs.projection[(r, c)] * ax[c]).sum();
            let lu = coeffs.lambda[r] * ux;
            exposure[i * d + r] = -(lu + pa) / uxx;
            scale = scale.max(lu.abs()).max(pa.abs());
        }
        for j in 0..k {
            holdings[i * k + j] = (0..d).map(|r| coeffs.sigma_pinv[(j, r)] * exposure[i * d + r]).sum();
        }
        // identity check with the projected exposure sigma pi
        let mut worst = 0.0f64;
        for r in 0..d {
            let sp: f64 = (0..k).map(|j| coeffs.sigma[(r, j)] * holdings[i * k + j]).sum();
            let pa: f64 = (0..d).map(|c| coeffs.projection[(r, c)] * ax[c]).sum();
            worst = worst.max((sp * uxx + coeffs.lambda[r] * ux + pa).abs());
        }
        residual[i] = if scale > 0.0 { worst / scale } else { worst };
    }
    Ok(RecoveredStrategy {
        grid,
        num_assets: k,
        num_factors: d,
        holdings,
        exposure,
        residual,
    })
}

/// CSV snapshot with columns `z, Y, R, V, U, a1..ad` (the `a` columns only
/// when the volatility field has been computed).
pub fn write_field_csv<W: Write>(out: W, field: &UtilityField, snapshot: &FieldSnapshot) -> Result<()> {
    let grid = field.grid();
    let d = field.num_factors();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["z", "Y", "R", "V", "U"].iter().map(|s| s.to_string()).collect();
    if snapshot.a.is_some() {
        header.extend((1..=d).map(|r| format!("a{r}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..grid.len() {
        let mut row = vec![
            grid.z(i).to_string(),
            snapshot.y[i].to_string(),
            snapshot.r[i].to_string(),
            snapshot.v[i].to_string(),
            snapshot.u[i].to_string(),
        ];
        if let Some(a) = &snapshot.a {
            row.extend(a[i * d..(i + 1) * d].iter().map(|v| v.to_string()));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate_brownian, BlackScholes};
    use crate::spde::{solve_r, SolveOptions};
    use crate::strategy::merton_strategy;

    fn reference() -> MarketParams {
        MarketParams::black_scholes(BlackScholes::new(0.08, 0.06, 0.2, 0.3, 0.5).unwrap()).unwrap()
    }

    fn build(anchor: AnchorVol, zeta0: f64) -> (UtilityField, BrownianPath, MarketParams, FeedbackStrategy) {
        let market = reference();
        let s = merton_strategy(&market, 0.5).unwrap();
        let g = LogGrid::around(1.0).unwrap();
        let p = simulate_brownian(2, 0.2, 1e-3, 3, 0).unwrap();
        let opts = SolveOptions {
            keep_every: 100,
            probes: vec![1.0],
        };
        let sol = solve_r(&s, &market, &|x: f64| x.powf(-1.5), &p, &g, &opts).unwrap();
        let mut field = integrate_to_u(&sol, &s, &market, &p, 1.0, zeta0, &anchor).unwrap();
        field.attach_volatility(&s, &market, &p).unwrap();
        (field, p, market, s)
    }

    #[test]
    fn power_family_integrates_symbolically() {
        let (field, ..) = build(AnchorVol::ClosedForm { epsilon: 0.5 }, 4.0);
        for snap in field.snapshots() {
            let q = (-0.08 * snap.t).exp();
            for i in (0..field.grid().len()).step_by(17) {
                let x = field.grid().z(i).exp();
                assert!((snap.v[i] / (2.0 * q / x.sqrt()) - 1.0).abs() < 1e-3, "V at node {i}");
                let exact_u = 4.0 * q * x.sqrt();
                assert!((snap.u[i] - exact_u).abs() < 2e-3 * exact_u.max(1.0), "U at node {i}");
            }
            assert_eq!(field.u_at(snap, 1.0).unwrap(), snap.zeta);
        }
    }

    #[test]
    fn anchor_keeps_zeta() {
        let (field, ..) = build(AnchorVol::Zero, 1.0);
        for snap in field.snapshots() {
            assert_eq!(field.u_at(snap, 1.0).unwrap(), snap.zeta);
            assert_eq!(snap.zeta, field.zeta()[snap.step]);
        }
    }

    #[test]
    fn volatility_derivative_matches_closed_form() {
        // a^1(x) = -(lambda_1 - eps b) Q x^{1/2} / (eps (1 - eps)) = 0 for the reference
        // market at eps = 0.5, so d a^1 / dx = sigma pi R - V lambda_1 = 0.8 x Q x^{-1.5} - 2 Q x^{-1/2} 0.4 = 0.
        let (field, ..) = build(AnchorVol::ClosedForm { epsilon: 0.5 }, 4.0);
        for snap in field.snapshots() {
            let a = snap.a.as_ref().unwrap();
            for i in 0..field.grid().len() {
                let scale = (field.grid().z(i) * 0.5).exp();
                assert!(a[2 * i].abs() < 1e-3 * scale, "a1 at node {i}: {}", a[2 * i]);
                assert!(a[2 * i + 1].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn merton_round_trip() {
        let (field, p, market, _) = build(AnchorVol::Zero, 1.0);
        let coeffs = market.coefficients(0, &p).unwrap();
        let rec = recover_strategy(&field, field.terminal(), &coeffs).unwrap();
        let props = rec.proportions(0);
        for (i, v) in props.iter().enumerate().skip(1).take(field.grid().len() - 2) {
            assert!((v - 4.0).abs() < 5e-3, "node {i}: {v}");
        }
        for i in 0..field.grid().len() {
            assert!(rec.holdings_at(i)[1].abs() < 1e-8);
        }
        assert!(rec.max_residual() < 1e-8);
    }

    #[test]
    fn shallow_tail_is_not_integrable() {
        let market = reference();
        let s = merton_strategy(&market, 0.5).unwrap();
        let g = LogGrid::around(1.0).unwrap();
        let p = simulate_brownian(2, 0.01, 1e-3, 3, 0).unwrap();
        let sol = solve_r(&s, &market, &|x: f64| x.powf(-0.9), &p, &g, &SolveOptions::default()).unwrap();
        let err = integrate_to_u(&sol, &s, &market, &p, 1.0, 0.0, &AnchorVol::Zero).unwrap_err();
        match err {
            Error::Integrability { slope } => assert!((slope + 0.9).abs() < 1e-9),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn csv_columns() {
        let (field, ..) = build(AnchorVol::Zero, 1.0);
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &field, field.terminal()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("z,Y,R,V,U,a1,a2"));
        assert_eq!(text.lines().count(), 513);
    }
}
