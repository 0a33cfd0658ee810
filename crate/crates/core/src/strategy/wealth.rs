use std::io::Write;

use super::{FeedbackStrategy, StrategyContext};
use crate::error::{ensure_positive, Error, Result};
use crate::market::{BrownianPath, MarketParams};

/// Wealth is floored at this fraction of its starting value.
pub const FLOOR_FRACTION: f64 = 1e-12;

/// How an injection resets wealth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InjectionRule {
    /// `xi` is the given level.
    Level(f64),
    /// `xi = m * X_{tau-}`.
    Multiplier(f64),
}

impl InjectionRule {
    /// Post-injection wealth `xi` given the pre-injection wealth.
    pub fn apply(self, wealth: f64) -> f64 {
        match self {
            Self::Level(level) => level,
            Self::Multiplier(m) => m * wealth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionEvent {
    pub time: f64,
    pub rule: InjectionRule,
}

/// Capital-injection events, sorted by time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InjectionSchedule {
    events: Vec<InjectionEvent>,
}

impl InjectionSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(events: Vec<InjectionEvent>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !(e.time >= 0.0) || !e.time.is_finite() {
                return Err(Error::Config(format!("injection time {} must be in [0, T]", e.time)));
            }
            if i > 0 && events[i - 1].time > e.time {
                return Err(Error::Config("injection events must be sorted by time".into()));
            }
            match e.rule {
                InjectionRule::Level(v) => ensure_positive("injection level", v)?,
                InjectionRule::Multiplier(v) => ensure_positive("injection multiplier", v)?,
            }
        }
        Ok(Self { events })
    }

    /// A single event.
    pub fn single(time: f64, rule: InjectionRule) -> Result<Self> {
        Self::new(vec![InjectionEvent { time, rule }])
    }

    pub fn events(&self) -> &[InjectionEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Initial pair `(xi, tau)`, with `tau` given as a grid index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartPoint {
    pub wealth: f64,
    pub step: usize,
}

impl StartPoint {
    pub fn inception(wealth: f64) -> Self {
        Self { wealth, step: 0 }
    }
}

/// Controlled wealth on the grid from the start index to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath {
    label: String,
    start: StartPoint,
    dt: f64,
    /// `values[i]` is the wealth at grid index `start.step + i`.
    values: Vec<f64>,
    injection_steps: Vec<usize>,
    floored_steps: Vec<usize>,
}

impl WealthPath {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn start(&self) -> StartPoint {
        self.start
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Wealth at grid index `step`; `None` before the start or past the horizon.
    pub fn at(&self, step: usize) -> Option<f64> {
        step.checked_sub(self.start.step)
            .and_then(|i| self.values.get(i).copied())
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("a wealth path holds at least its start value")
    }

    pub fn last_step(&self) -> usize {
        self.start.step + self.values.len() - 1
    }

    /// Whether the positivity floor was hit at any grid time.
    pub fn is_floored(&self) -> bool {
        !self.floored_steps.is_empty()
    }

    pub fn floored_steps(&self) -> &[usize] {
        &self.floored_steps
    }

    pub fn injection_steps(&self) -> &[usize] {
        &self.injection_steps
    }

    pub fn running_max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

/// Simulates `X^{pi, xi, tau}` along `path`.
///
/// Proportional strategies are stepped exactly in log-wealth,
/// `dlog X = (v.lambda - |v|^2/2) dt + v.dW` with `v = sigma c`; general
/// fields use an Euler step `dX = (sigma pi).(lambda dt + dW)`. Injection
/// events reset wealth at their grid time after the step into it. A value at
/// or below `FLOOR_FRACTION * xi` is clamped to the floor and reported.
pub fn simulate_wealth(
    strategy: &FeedbackStrategy,
    path: &BrownianPath,
    market: &MarketParams,
    start: StartPoint,
    injections: &InjectionSchedule,
) -> Result<WealthPath> {
    ensure_positive("initial wealth", start.wealth)?;
    let n = path.num_steps();
    if start.step > n {
        return Err(Error::Config(format!(
            "start index {} beyond the last grid index {n}",
            start.step
        )));
    }
    if strategy.num_assets() != market.num_assets() {
        return Err(Error::Config(format!(
            "strategy `{}` trades {} assets, market has {}",
            strategy.label(),
            strategy.num_assets(),
            market.num_assets()
        )));
    }
    let mut events = Vec::with_capacity(injections.events().len());
    for e in injections.events() {
        let step = path.step_of(e.time)?;
        if step <= start.step {
            return Err(Error::Config(format!(
                "injection at t = {} is not after the start time {}",
                e.time,
                path.time(start.step)
            )));
        }
        events.push((step, e.rule));
    }

    let floor = FLOOR_FRACTION * start.wealth;
    let dt = path.dt();
    let d = market.num_factors();
    let k = market.num_assets();
    let mut values = Vec::with_capacity(n - start.step + 1);
    let mut injection_steps = Vec::new();
    let mut floored_steps = Vec::new();
    let mut pi = vec![0.0; k];
    let mut v = vec![0.0; d];
    let mut next_event = 0;

    let mut x = start.wealth;
    values.push(x);
    for i in start.step..n {
        let coeffs = market.coefficients(i, path)?;
        let dw = path.increment(i);
        match strategy.proportions() {
            Some(c) => {
                coeffs.exposure(c, &mut v);
                let drift: f64 = (0..d).map(|r| v[r] * coeffs.lambda[r] - 0.5 * v[r] * v[r]).sum();
                let shock: f64 = (0..d).map(|r| v[r] * dw[r]).sum();
                x *= (drift * dt + shock).exp();
            }
            None => {
                strategy.holdings(&StrategyContext::on_path(path, i), x, &mut pi);
                coeffs.exposure(&pi, &mut v);
                x += (0..d).map(|r| v[r] * (coeffs.lambda[r] * dt + dw[r])).sum::<f64>();
            }
        }
        let step = i + 1;
        if !(x > floor) {
            floored_steps.push(step);
            x = floor;
        }
        while next_event < events.len() && events[next_event].0 == step {
            x = events[next_event].1.apply(x);
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::Config(format!(
                    "injection at time index {step} produces nonpositive wealth {x}"
                )));
            }
            injection_steps.push(step);
            next_event += 1;
        }
        values.push(x);
    }
    Ok(WealthPath {
        label: strategy.label().to_string(),
        start,
        dt,
        values,
        injection_steps,
        floored_steps,
    })
}

/// CSV dump with columns `t, X, flags` (`flags` holds `injection` and/or `floored`).
pub fn write_wealth_csv<W: Write>(out: W, wealth: &WealthPath) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "X", "flags"]).map_err(crate::market::csv_err)?;
    for (offset, x) in wealth.values().iter().enumerate() {
        let step = wealth.start.step + offset;
        let mut flags = Vec::new();
        if wealth.injection_steps.contains(&step) {
            flags.push("injection");
        }
        if wealth.floored_steps.contains(&step) {
            flags.push("floored");
        }
        w.write_record([wealth.time(step).to_string(), x.to_string(), flags.join("|")])
            .map_err(crate::market::csv_err)?;
    }
    w.flush()?;
    Ok(())
}
