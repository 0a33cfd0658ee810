//! Contracts: the closed-form Black–Scholes family, contracts built from a
//! terminal utility field, normalization, and the injection-fragile
//! indicator contract.

mod closed_form;

pub use closed_form::{bs_value_function, q_from_returns, BsClosedForm};

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::market::{csv_err, BlackScholes};
use crate::spde::UtilityField;

/// Relative tolerance of the indicator contract's wealth match.
pub const FAKE_MATCH_TOLERANCE: f64 = 1e-8;

/// Terminal market information a payout may depend on.
#[derive(Clone, Copy, Default)]
pub struct TerminalState<'a> {
    pub t: f64,
    /// Brownian levels `W_T`.
    pub w: &'a [f64],
    /// Asset returns `S_T / S_0`.
    pub ratios: &'a [f64],
    /// Target terminal wealth `X*_T` on this path, for the indicator contract.
    pub target_wealth: Option<f64>,
    /// Solver-built utility field along this path, for SPDE-built contracts.
    pub field: Option<&'a UtilityField>,
}

/// Where a contract came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    SpdeBuilt,
    Fake,
    Custom,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ClosedForm => "closed-form",
            Self::SpdeBuilt => "spde-built",
            Self::Fake => "fake",
            Self::Custom => "custom",
        })
    }
}

pub type PayoutFn = dyn Fn(f64, &TerminalState<'_>) -> Result<f64> + Send + Sync;

/// Unscaled payout rules.
#[derive(Clone)]
enum Rule {
    /// `U_T(x)` of the closed-form family, with `Q_T` from asset returns.
    ClosedFormUtility(BsClosedForm),
    /// `U_T(x)` read from the solver field carried by the terminal state.
    FieldUtility,
    /// `1` if `x` matches the target within the relative tolerance, else `0`.
    Indicator { tolerance: f64 },
    Custom(Arc<PayoutFn>),
}

/// Terminal payout `C(x) = scale * rule(x, state)` with participation level `u0`.
#[derive(Clone)]
pub struct Contract {
    rule: Rule,
    scale: f64,
    u0: f64,
    provenance: Provenance,
    limited_liability: bool,
}

impl fmt::Debug for Contract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Contract")
            .field("provenance", &self.provenance)
            .field("scale", &self.scale)
            .field("u0", &self.u0)
            .field("limited_liability", &self.limited_liability)
            .finish()
    }
}

/// The terminal utility a contract is built from.
#[derive(Debug, Clone, Copy)]
pub enum TerminalUtility {
    ClosedForm(BsClosedForm),
    /// The field carried by each path's [`TerminalState`].
    PathField,
}

impl Contract {
    /// The closed-form optimal contract `C*(x) = u0 (x / X0)^{1-eps} Q_T`.
    pub fn closed_form(form: BsClosedForm) -> Self {
        // C* = U_T(x) u0 / U_0(X0) with U_0(X0) = X0^{1-eps} / (eps (1 - eps)).
        let scale = form.u0 / form.utility(1.0, form.x0);
        Self {
            rule: Rule::ClosedFormUtility(form),
            scale,
            u0: form.u0,
            provenance: Provenance::ClosedForm,
            limited_liability: true,
        }
    }

    /// A user-defined payout. Limited liability is unknown until observed.
    pub fn custom(u0: f64, rule: Arc<PayoutFn>) -> Result<Self> {
        ensure_positive("u0", u0)?;
        Ok(Self {
            rule: Rule::Custom(rule),
            scale: 1.0,
            u0,
            provenance: Provenance::Custom,
            limited_liability: false,
        })
    }

    pub fn u0(&self) -> f64 {
        self.u0
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn limited_liability(&self) -> bool {
        self.limited_liability
    }

    /// Updates the limited-liability flag with sampled payouts.
    pub fn observe_payouts(&mut self, payouts: &[f64]) {
        let nonnegative = payouts.iter().all(|p| *p >= 0.0);
        self.limited_liability = match self.provenance {
            Provenance::Custom if !payouts.is_empty() => nonnegative,
            _ => self.limited_liability && nonnegative,
        };
    }

    pub fn payout(&self, x: f64, state: &TerminalState<'_>) -> Result<f64> {
        let raw = match &self.rule {
            Rule::ClosedFormUtility(form) => {
                let q = if state.ratios.is_empty() {
                    form.q(state.t, state.w)
                } else {
                    form.q_hat(state.t, state.ratios)?
                };
                form.utility(q, x)
            }
            Rule::FieldUtility => {
                let field = state
                    .field
                    .ok_or_else(|| Error::Config("this contract needs the terminal utility field of the path".into()))?;
                field.u_at(field.terminal(), x)?
            }
            Rule::Indicator { tolerance } => {
                let target = state
                    .target_wealth
                    .ok_or_else(|| Error::Config("the indicator contract needs the target terminal wealth".into()))?;
                if (x - target).abs() <= tolerance * target.abs() {
                    1.0
                } else {
                    0.0
                }
            }
            Rule::Custom(f) => f(x, state)?,
        };
        Ok(self.scale * raw)
    }

    /// Serializable description; `None` for custom contracts.
    pub fn spec(&self) -> Option<ContractSpec> {
        match &self.rule {
            Rule::ClosedFormUtility(form) => Some(ContractSpec::ClosedForm {
                mu1: form.market.mu1,
                mu2: form.market.mu2,
                sigma1: form.market.sigma1,
                sigma2: form.market.sigma2,
                rho: form.market.rho,
                gamma: form.gamma,
                epsilon: form.epsilon,
                u0: self.u0,
                x0: form.x0,
                horizon: form.horizon,
                scale: self.scale,
            }),
            Rule::FieldUtility => Some(ContractSpec::SpdeBuilt {
                u0: self.u0,
                scale: self.scale,
            }),
            Rule::Indicator { tolerance } => Some(ContractSpec::Fake {
                u0: self.u0,
                tolerance: *tolerance,
            }),
            Rule::Custom(_) => None,
        }
    }
}

/// `C*(x) = U_T(x) u0 / U_0(X0)`.
pub fn contract_from_u(terminal: TerminalUtility, u0_at_x0: f64, u0: f64) -> Result<Contract> {
    if !(u0_at_x0 > 0.0) || !u0_at_x0.is_finite() {
        return Err(Error::Normalization(u0_at_x0));
    }
    ensure_positive("u0", u0)?;
    let (rule, provenance) = match terminal {
        TerminalUtility::ClosedForm(form) => (Rule::ClosedFormUtility(form), Provenance::ClosedForm),
        TerminalUtility::PathField => (Rule::FieldUtility, Provenance::SpdeBuilt),
    };
    Ok(Contract {
        rule,
        scale: u0 / u0_at_x0,
        u0,
        provenance,
        // U_T >= 0 is not implied in general; established by sampling.
        limited_liability: provenance == Provenance::ClosedForm,
    })
}

/// `C_raw u0 / E[C_raw(X*_T)]`.
pub fn normalize_contract(raw: &Contract, estimated_mean: f64, u0: f64) -> Result<Contract> {
    if !(estimated_mean > 0.0) || !estimated_mean.is_finite() {
        return Err(Error::Normalization(estimated_mean));
    }
    ensure_positive("u0", u0)?;
    let mut c = raw.clone();
    c.scale = raw.scale * (u0 / estimated_mean);
    c.u0 = u0;
    Ok(c)
}

/// Pays `u0` when terminal wealth equals the path's target `X*_T` (within
/// a relative tolerance of `1e-8`), and nothing otherwise.
pub fn fake_contract(u0: f64) -> Result<Contract> {
    ensure_positive("u0", u0)?;
    Ok(Contract {
        rule: Rule::Indicator {
            tolerance: FAKE_MATCH_TOLERANCE,
        },
        scale: u0,
        u0,
        provenance: Provenance::Fake,
        limited_liability: true,
    })
}

/// Key-value description of a contract (`type` tag plus parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ContractSpec {
    ClosedForm {
        mu1: f64,
        mu2: f64,
        sigma1: f64,
        sigma2: f64,
        rho: f64,
        gamma: f64,
        epsilon: f64,
        u0: f64,
        x0: f64,
        horizon: f64,
        scale: f64,
    },
    SpdeBuilt {
        u0: f64,
        scale: f64,
    },
    Fake {
        u0: f64,
        tolerance: f64,
    },
}

impl ContractSpec {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<Contract> {
        match *self {
            Self::ClosedForm {
                mu1,
                mu2,
                sigma1,
                sigma2,
                rho,
                gamma,
                epsilon,
                u0,
                x0,
                horizon,
                scale,
            } => {
                let form = BsClosedForm::new(BlackScholes::new(mu1, mu2, sigma1, sigma2, rho)?, gamma, epsilon, u0, x0, horizon)?;
                ensure_positive("scale", scale)?;
                let mut c = Contract::closed_form(form);
                c.scale = scale;
                Ok(c)
            }
            Self::SpdeBuilt { u0, scale } => contract_from_u(TerminalUtility::PathField, u0 / scale, u0),
            Self::Fake { u0, tolerance } => {
                ensure_positive("tolerance", tolerance)?;
                let mut c = fake_contract(u0)?;
                c.rule = Rule::Indicator { tolerance };
                Ok(c)
            }
        }
    }
}

/// CSV payout table with columns `x, payout` over the given wealth levels.
pub fn write_payout_table<W: Write>(out: W, contract: &Contract, xs: &[f64], state: &TerminalState<'_>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "payout"]).map_err(csv_err)?;
    for &x in xs {
        w.write_record([x.to_string(), contract.payout(x, state)?.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
