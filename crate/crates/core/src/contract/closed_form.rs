use crate::error::{ensure_epsilon, ensure_finite, ensure_gamma, ensure_positive, Error, Result};
use crate::market::BlackScholes;

/// The closed-form utility family of the two-asset Black–Scholes market
/// with the Merton target `pi^1 = lambda_1 x / (sigma_1 (1 - gamma))`, `pi^2 = 0`:
///
/// ```text
/// Q_t    = exp(-(B - eps A) t - (lambda_1 - eps p) W^1_t - lambda_2 W^2_t)
/// U_t(x) = Q_t x^{1-eps} / (eps (1 - eps))
/// C*(x)  = u0 (x / X0)^{1-eps} Q_T
/// ```
///
/// with `p = sigma_1 pi^1`, `A = (2 lambda_1 p - p^2) / 2`, `B = |lambda|^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsClosedForm {
    pub market: BlackScholes,
    pub gamma: f64,
    pub epsilon: f64,
    pub u0: f64,
    pub x0: f64,
    pub horizon: f64,
    lambda: [f64; 2],
    proportion: f64,
    a: f64,
    b: f64,
}

impl BsClosedForm {
    pub fn new(market: BlackScholes, gamma: f64, epsilon: f64, u0: f64, x0: f64, horizon: f64) -> Result<Self> {
        market.validate()?;
        ensure_gamma(gamma)?;
        ensure_epsilon(epsilon)?;
        ensure_positive("u0", u0)?;
        ensure_positive("X0", x0)?;
        ensure_finite("T", horizon)?;
        if horizon < 0.0 {
            return Err(Error::Domain {
                name: "T",
                value: horizon,
                constraint: "T >= 0".into(),
            });
        }
        let (lambda, proportion, a, b) = Self::derived(&market, gamma);
        Ok(Self {
            market,
            gamma,
            epsilon,
            u0,
            x0,
            horizon,
            lambda,
            proportion,
            a,
            b,
        })
    }

    fn derived(market: &BlackScholes, gamma: f64) -> ([f64; 2], f64, f64, f64) {
        let lambda = market.lambda_closed_form();
        let proportion = lambda[0] / (market.sigma1 * (1.0 - gamma));
        let p = market.sigma1 * proportion;
        let a = 0.5 * (2.0 * lambda[0] * p - p * p);
        let b = 0.5 * (lambda[0] * lambda[0] + lambda[1] * lambda[1]);
        (lambda, proportion, a, b)
    }

    /// Recomputes `A` and `B` from the market and checks the stored values.
    pub fn is_consistent(&self) -> bool {
        let (_, _, a, b) = Self::derived(&self.market, self.gamma);
        (a - self.a).abs() <= 1e-14 && (b - self.b).abs() <= 1e-14
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn lambda(&self) -> [f64; 2] {
        self.lambda
    }

    /// Merton proportion `pi^1 / x`.
    pub fn merton_proportion(&self) -> f64 {
        self.proportion
    }

    /// `sigma_1 pi^1 / x`.
    pub fn exposure(&self) -> f64 {
        self.market.sigma1 * self.proportion
    }

    /// Loadings of `-log Q` on `(W^1, W^2)`: `(lambda_1 - eps p, lambda_2)`.
    pub fn loading(&self) -> [f64; 2] {
        [self.lambda[0] - self.epsilon * self.exposure(), self.lambda[1]]
    }

    /// `1 / (eps (1 - eps))`.
    pub fn normalizer(&self) -> f64 {
        1.0 / (self.epsilon * (1.0 - self.epsilon))
    }

    /// `Q_t` from the Brownian levels `W_t`.
    pub fn q(&self, t: f64, w: &[f64]) -> f64 {
        let l = self.loading();
        (-(self.b - self.epsilon * self.a) * t - l[0] * w[0] - l[1] * w[1]).exp()
    }

    /// `Q_t` as a power function of the asset returns `S^i_t / S^i_0`.
    pub fn q_hat(&self, t: f64, ratios: &[f64]) -> Result<f64> {
        if ratios.len() != 2 {
            return Err(Error::Config(format!("need two asset ratios, got {}", ratios.len())));
        }
        for &r in ratios {
            ensure_positive("asset ratio", r)?;
        }
        let [e1, e2] = self.return_exponents();
        let BlackScholes {
            sigma1, sigma2, rho, ..
        } = self.market;
        let rb = self.market.rho_bar();
        let [l1, l2] = self.lambda;
        let p = self.proportion;
        let rate = self.b - l1 * sigma1 / 2.0 + self.epsilon * p * sigma1 * sigma1 / 2.0 * (1.0 - p)
            - l2 * (sigma2 - sigma1 * rho) / (2.0 * rb);
        Ok((rate * t).exp() * ratios[0].powf(e1) * ratios[1].powf(e2))
    }

    /// Exponents of `S^1_t / S^1_0` and `S^2_t / S^2_0` in `Q_t`.
    pub fn return_exponents(&self) -> [f64; 2] {
        let rb = self.market.rho_bar();
        let [l1, l2] = self.lambda;
        let s1 = self.market.sigma1;
        [
            self.epsilon * self.proportion + self.market.rho * l2 / (s1 * rb) - l1 / s1,
            -l2 / (self.market.sigma2 * rb),
        ]
    }

    /// `U_t(x)` for a given `Q_t`.
    pub fn utility(&self, q: f64, x: f64) -> f64 {
        q * x.powf(1.0 - self.epsilon) * self.normalizer()
    }

    /// `V_t(x) = U_x = Q x^{-eps} / eps`.
    pub fn marginal(&self, q: f64, x: f64) -> f64 {
        q * x.powf(-self.epsilon) / self.epsilon
    }

    /// `R_t(x) = -U_xx = Q x^{-1-eps}`.
    pub fn curvature(&self, q: f64, x: f64) -> f64 {
        q * x.powf(-1.0 - self.epsilon)
    }

    /// Volatility field `a_t(x) = -(lambda - eps b) Q x^{1-eps} / (eps (1 - eps))`,
    /// with `b = (p, 0)`.
    pub fn volatility(&self, q: f64, x: f64) -> [f64; 2] {
        let l = self.loading();
        let scale = -q * x.powf(1.0 - self.epsilon) * self.normalizer();
        [l[0] * scale, l[1] * scale]
    }

    /// `zeta_0 = U_0(1)`.
    pub fn zeta0(&self) -> f64 {
        self.normalizer()
    }

    /// `C*(x) = u0 (x / X0)^{1-eps} Q_T`.
    pub fn payout(&self, q_terminal: f64, x: f64) -> f64 {
        self.u0 * (x / self.x0).powf(1.0 - self.epsilon) * q_terminal
    }

    /// Asset returns `S_t / S_0` implied by the Brownian levels (exact for
    /// constant coefficients).
    pub fn ratios_from_levels(&self, t: f64, w: &[f64]) -> [f64; 2] {
        let BlackScholes {
            mu1,
            mu2,
            sigma1,
            sigma2,
            rho,
        } = self.market;
        let rb = self.market.rho_bar();
        let l1 = (mu1 - 0.5 * sigma1 * sigma1) * t + sigma1 * w[0];
        let l2 = (mu2 - 0.5 * sigma2 * sigma2) * t + sigma2 * (rho * w[0] + rb * w[1]);
        [l1.exp(), l2.exp()]
    }
}

/// Principal's value function `V(t, x) = x^gamma / gamma exp((T - t) lambda_1^2 gamma / (2 (1 - gamma)))`.
pub fn bs_value_function(t: f64, x: f64, market: &BlackScholes, gamma: f64, horizon: f64) -> Result<f64> {
    ensure_gamma(gamma)?;
    ensure_positive("x", x)?;
    if !(t >= 0.0 && t <= horizon) {
        return Err(Error::Domain {
            name: "t",
            value: t,
            constraint: format!("0 <= t <= T = {horizon}"),
        });
    }
    let l1 = market.lambda_closed_form()[0];
    Ok(x.powf(gamma) / gamma * ((horizon - t) * l1 * l1 * gamma / (2.0 * (1.0 - gamma))).exp())
}

/// `Q_t` from returns, for a closed-form family.
pub fn q_from_returns(t: f64, s1_ratio: f64, s2_ratio: f64, form: &BsClosedForm) -> Result<f64> {
    form.q_hat(t, &[s1_ratio, s2_ratio])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{asset_path, simulate_brownian, MarketParams};
    use proptest::prelude::*;

    fn market() -> BlackScholes {
        BlackScholes::new(0.08, 0.06, 0.2, 0.3, 0.5).unwrap()
    }

    fn form(eps: f64) -> BsClosedForm {
        BsClosedForm::new(market(), 0.5, eps, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn reference_constants() {
        let f = form(0.5);
        assert!(f.a().abs() < 1e-15);
        assert!((f.b() - 0.08).abs() < 1e-15);
        assert!((f.merton_proportion() - 4.0).abs() < 1e-14);
        assert!(f.loading()[0].abs() < 1e-15 && f.loading()[1].abs() < 1e-15);
        assert!(f.is_consistent());
        for t in [0.0, 0.3, 1.0] {
            assert!((f.q(t, &[0.7, -1.1]) - (-0.08 * t).exp()).abs() < 1e-15);
        }
        let q_t = f.q(1.0, &[0.0, 0.0]);
        assert!((f.payout(q_t, 2.25) - 1.5 * (-0.08f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn inception_identity() {
        let f = BsClosedForm::new(market(), 0.5, 0.3, 2.0, 3.0, 0.0).unwrap();
        assert_eq!(f.q(0.0, &[0.0, 0.0]), 1.0);
        assert_eq!(f.q_hat(0.0, &[1.0, 1.0]).unwrap(), 1.0);
        assert!((f.payout(1.0, 3.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn second_return_exponent() {
        let m = BlackScholes::new(0.08, 0.1, 0.2, 0.3, 0.5).unwrap();
        let f = BsClosedForm::new(m, 0.5, 0.3, 1.0, 1.0, 1.0).unwrap();
        let l2 = f.lambda()[1];
        assert!(l2.abs() > 0.1);
        assert!((f.return_exponents()[1] + l2 / (0.3 * 0.75f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn q_from_returns_matches_brownian_q_on_simulated_paths() {
        for (mu2, eps) in [(0.06, 0.3), (0.1, 0.7), (0.02, 0.5)] {
            let m = BlackScholes::new(0.08, mu2, 0.2, 0.3, 0.5).unwrap();
            let f = BsClosedForm::new(m, 0.5, eps, 1.0, 1.0, 1.0).unwrap();
            let params = MarketParams::black_scholes(m).unwrap();
            for idx in 0..20 {
                let p = simulate_brownian(2, 1.0, 0.01, 17, idx).unwrap();
                let s = asset_path(&p, &params, &[1.0, 1.0]).unwrap();
                for step in [1, 50, 100] {
                    let t = p.time(step);
                    let r = s.ratios(step);
                    let via_w = f.q(t, p.level(step));
                    let via_returns = q_from_returns(t, r[0], r[1], &f).unwrap();
                    assert!((via_w - via_returns).abs() < 1e-10 * via_w.max(1.0));
                    let implied = f.ratios_from_levels(t, p.level(step));
                    assert!((implied[0] / r[0] - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn nonpositive_ratio_is_rejected() {
        assert!(form(0.3).q_hat(0.5, &[0.0, 1.0]).is_err());
        assert!(form(0.3).q_hat(0.5, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn value_function_reference() {
        let v = bs_value_function(0.0, 1.0, &market(), 0.5, 1.0).unwrap();
        assert!((v - 2.0 * 0.08f64.exp()).abs() < 1e-14);
        assert!((v - 2.16657).abs() < 1e-5);
        assert_eq!(bs_value_function(1.0, 4.0, &market(), 0.5, 1.0).unwrap(), 4.0);
        assert!(bs_value_function(0.0, 1.0, &market(), 1.0, 1.0).is_err());
    }

    #[test]
    fn value_function_solves_hjb() {
        // V_t + max_p (p sigma_1 lambda_1 V_x + sigma_1^2 p^2 V_xx / 2) = 0, the
        // maximizer being p* = -lambda_1 V_x / (sigma_1 V_xx); derivatives by hand.
        let m = market();
        let l1 = 0.4;
        for gamma in [-2.0, 0.3, 0.5] {
            let k = l1 * l1 * gamma / (2.0 * (1.0 - gamma));
            for t in [0.0, 0.4, 0.9] {
                for x in [0.5, 1.0, 3.0] {
                    let v = bs_value_function(t, x, &m, gamma, 1.0).unwrap();
                    let vt = -k * v;
                    let vx = gamma * v / x;
                    let vxx = gamma * (gamma - 1.0) * v / (x * x);
                    let p = -l1 * vx / (0.2 * vxx);
                    assert!((p / x - l1 / (0.2 * (1.0 - gamma))).abs() < 1e-12);
                    let residual = vt + p * 0.2 * l1 * vx + 0.5 * 0.04 * p * p * vxx;
                    assert!(residual.abs() < 1e-10, "{residual}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn payout_is_homogeneous(x in 1e-3f64..1e3, kappa in 1e-2f64..1e2, eps in 0.01f64..0.99, q in 0.1f64..10.0) {
            let f = BsClosedForm::new(market(), 0.5, eps, 1.3, 2.0, 1.0).unwrap();
            let lhs = f.payout(q, kappa * x);
            let rhs = kappa.powf(1.0 - eps) * f.payout(q, x);
            prop_assert!((lhs / rhs - 1.0).abs() < 1e-12);
            prop_assert!(f.payout(q, x) >= 0.0);
        }
    }
}
