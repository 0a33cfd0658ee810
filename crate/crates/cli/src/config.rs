//! Flat scenario configuration with embedded defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use forward_contract::contract::BsClosedForm;
use forward_contract::market::{grid_steps, BlackScholes, MarketParams};
use forward_contract::spde::{AnchorVol, LogGrid};
use forward_contract::strategy::{asset2_deviation, scaled_merton, FeedbackStrategy, InjectionRule};
use forward_contract::verification::{DeviationFamily, InjectionScenario, McConfig, NestedConfig};

use crate::CliError;

/// Every key is optional; missing keys take the reference-scenario defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub u0: f64,
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Anchor wealth of the solver-built utility.
    pub x_bar: f64,
    /// `"closed-form"` or `"zero"`.
    pub anchor: String,
    pub z_min: f64,
    pub z_max: f64,
    pub nodes: usize,
    pub eta: f64,
    /// Flat Monte-Carlo ensemble size.
    pub paths: usize,
    pub outer_paths: usize,
    pub inner_paths: usize,
    /// Paths checked against the closed form by the solver comparison.
    pub spde_paths: usize,
    pub spde_tolerance: f64,
    /// Paths written by `simulate`.
    pub simulate_paths: usize,
    pub checkpoints: Vec<f64>,
    /// Labels: `scaled-merton K`, `asset2-deviation`, `zero`.
    pub deviations: Vec<String>,
    pub asset2_weight: f64,
    /// Injection times; each pairs with the multiplier at the same position.
    pub injection_times: Vec<f64>,
    pub injection_multipliers: Vec<f64>,
    /// Run the nested injection test (the slowest part of `verify`).
    pub nested: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            mu1: 0.08,
            mu2: 0.06,
            sigma1: 0.2,
            sigma2: 0.3,
            rho: 0.5,
            gamma: 0.5,
            epsilon: 0.5,
            u0: 1.0,
            x0: 1.0,
            horizon: 1.0,
            dt: 1e-3,
            x_bar: 1.0,
            anchor: "closed-form".into(),
            z_min: -6.0,
            z_max: 6.0,
            nodes: 512,
            eta: 1.5,
            paths: 10_000,
            outer_paths: 1000,
            inner_paths: 1000,
            spde_paths: 4,
            spde_tolerance: 1e-3,
            simulate_paths: 4,
            checkpoints: vec![0.25, 0.5, 1.0],
            deviations: vec![
                "scaled-merton 0.5".into(),
                "scaled-merton 1.5".into(),
                "scaled-merton 2".into(),
                "asset2-deviation".into(),
                "zero".into(),
            ],
            asset2_weight: 1.0,
            injection_times: vec![0.5],
            injection_multipliers: vec![2.0],
            nested: true,
            seed: 20_240_601,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Checks every domain before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        self.closed_form()?;
        self.grid()?;
        self.anchor_vol()?;
        self.family()?;
        self.injection_scenarios()?;
        grid_steps(self.horizon, self.dt)?;
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(CliError::Config(format!("`{name}` must be at least 1")))
            } else {
                Ok(())
            }
        };
        positive("paths", self.paths)?;
        positive("spde_paths", self.spde_paths)?;
        positive("simulate_paths", self.simulate_paths)?;
        if !(self.spde_tolerance > 0.0) {
            return Err(CliError::Config(format!(
                "`spde_tolerance` = {} must be > 0",
                self.spde_tolerance
            )));
        }
        if self.checkpoints.is_empty() {
            return Err(CliError::Config("`checkpoints` must not be empty".into()));
        }
        self.grid()?.check_interior(self.x_bar)?;
        Ok(())
    }

    pub fn black_scholes(&self) -> Result<BlackScholes, CliError> {
        Ok(BlackScholes::new(self.mu1, self.mu2, self.sigma1, self.sigma2, self.rho)?)
    }

    pub fn market(&self) -> Result<MarketParams, CliError> {
        Ok(MarketParams::black_scholes(self.black_scholes()?)?)
    }

    pub fn closed_form(&self) -> Result<BsClosedForm, CliError> {
        Ok(BsClosedForm::new(
            self.black_scholes()?,
            self.gamma,
            self.epsilon,
            self.u0,
            self.x0,
            self.horizon,
        )?)
    }

    pub fn grid(&self) -> Result<LogGrid, CliError> {
        Ok(LogGrid::new(self.z_min, self.z_max, self.nodes, self.eta)?)
    }

    pub fn anchor_vol(&self) -> Result<AnchorVol, CliError> {
        match self.anchor.as_str() {
            "closed-form" => Ok(AnchorVol::ClosedForm { epsilon: self.epsilon }),
            "zero" => Ok(AnchorVol::Zero),
            other => Err(CliError::Config(format!(
                "`anchor` = \"{other}\" must be \"closed-form\" or \"zero\""
            ))),
        }
    }

    /// Resolves the deviation labels against the Merton control.
    pub fn family(&self) -> Result<DeviationFamily, CliError> {
        let market = self.market()?;
        let mut family = DeviationFamily::new(forward_contract::strategy::merton_strategy(&market, self.gamma)?);
        for label in &self.deviations {
            let strategy = if label == "zero" {
                FeedbackStrategy::zero(2)
            } else if label == "asset2-deviation" {
                asset2_deviation(&market, self.gamma, self.asset2_weight)?
            } else if let Some(k) = label.strip_prefix("scaled-merton ") {
                let kappa: f64 = k
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("deviation `{label}`: `{k}` is not a number")))?;
                scaled_merton(&market, self.gamma, kappa)?.with_label(label.clone())
            } else {
                return Err(CliError::Config(format!(
                    "unknown deviation `{label}`; expected `scaled-merton K`, `asset2-deviation` or `zero`"
                )));
            };
            family.push(strategy)?;
        }
        Ok(family)
    }

    pub fn injection_scenarios(&self) -> Result<Vec<InjectionScenario>, CliError> {
        if self.injection_times.len() != self.injection_multipliers.len() {
            return Err(CliError::Config(format!(
                "{} injection times but {} multipliers",
                self.injection_times.len(),
                self.injection_multipliers.len()
            )));
        }
        self.injection_times
            .iter()
            .zip(&self.injection_multipliers)
            .map(|(&time, &m)| {
                if !(m > 0.0) {
                    return Err(CliError::Config(format!(
                        "injection multiplier {m} must be > 0 (post-injection wealth must stay positive)"
                    )));
                }
                Ok(InjectionScenario {
                    time,
                    rule: InjectionRule::Multiplier(m),
                })
            })
            .collect()
    }

    pub fn mc(&self) -> McConfig {
        McConfig {
            paths: self.paths,
            seed: self.seed,
            horizon: self.horizon,
            dt: self.dt,
            x0: self.x0,
        }
    }

    pub fn nested_config(&self) -> NestedConfig {
        NestedConfig {
            outer: self.outer_paths,
            inner: self.inner_paths,
            seed: self.seed,
            horizon: self.horizon,
            dt: self.dt,
            x0: self.x0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let s = Scenario::default();
        s.validate().unwrap();
        let text = s.to_toml().unwrap();
        assert_eq!(Scenario::from_toml(&text).unwrap(), s);
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = Scenario::from_toml("gamma = 0.5\n\nvolatility = 0.2\n").unwrap_err().to_string();
        assert!(err.contains("volatility"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn gamma_domain_is_cited() {
        let s = Scenario::from_toml("gamma = 1.0").unwrap();
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("gamma in (-inf,0)U(0,1)"), "{err}");
    }

    #[test]
    fn labels_must_resolve() {
        let s = Scenario::from_toml("deviations = [\"scaled-merton 3\", \"martingale\"]").unwrap();
        assert!(s.validate().unwrap_err().to_string().contains("martingale"));
        let s = Scenario::from_toml("deviations = [\"scaled-merton 3\"]").unwrap();
        assert_eq!(s.family().unwrap().deviations()[0].label(), "scaled-merton 3");
    }
}
