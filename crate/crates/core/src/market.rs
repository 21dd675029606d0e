//! Constant-coefficient single-asset market.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

/// Trading constraint cone for the risky proportion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Unconstrained,
    NoShortSelling,
}

/// How the riskless rate enters the dual kernel.
///
/// `Discounted` works with wealth in units of the bank account, so the dual
/// state is a driftless exponential martingale. `WithRate` keeps the rate and
/// measures time to maturity τ directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Discounted,
    WithRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    r: f64,
    mu: f64,
    sigma: f64,
    horizon: f64,
    constraint: Constraint,
}

/// Log-normal law of the terminal dual state over a remaining horizon τ:
/// `ln Y_T = ln y + drift_shift − alpha·Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub tau: f64,
    pub alpha: f64,
    pub drift_shift: f64,
}

impl MarketModel {
    pub fn new(r: f64, mu: f64, sigma: f64, horizon: f64, constraint: Constraint) -> Result<Self> {
        if !(r.is_finite() && mu.is_finite() && sigma.is_finite() && horizon.is_finite()) {
            return Err(invalid("market coefficients must be finite"));
        }
        if r < 0.0 {
            return Err(invalid(format!("riskless rate r = {r} must be non-negative")));
        }
        if sigma <= 0.0 {
            return Err(invalid(format!("volatility sigma = {sigma} must be positive")));
        }
        if horizon <= 0.0 {
            return Err(invalid(format!("horizon T = {horizon} must be positive")));
        }
        if mu <= r {
            return Err(invalid(format!("drift mu = {mu} must exceed the rate r = {r}")));
        }
        Ok(Self { r, mu, sigma, horizon, constraint })
    }

    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    /// Excess return μ − r.
    pub fn excess_return(&self) -> f64 {
        self.mu - self.r
    }

    /// Sharpe ratio θ = (μ − r)/σ.
    pub fn sharpe(&self) -> f64 {
        self.excess_return() / self.sigma
    }

    /// Market price of risk after projecting onto the constraint's polar cone.
    ///
    /// With μ > r the polar-cone minimizer is zero for both supported cones,
    /// so this coincides with the Sharpe ratio.
    pub fn effective_theta(&self) -> f64 {
        match self.constraint {
            Constraint::Unconstrained | Constraint::NoShortSelling => self.sharpe(),
        }
    }

    /// Same market with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.r, self.mu, self.sigma, horizon, self.constraint)
    }

    /// Time to maturity T − t, checking 0 ≤ t ≤ T.
    pub fn time_to_maturity(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(domain(format!("time t = {t} outside [0, {}]", self.horizon)));
        }
        Ok(self.horizon - t)
    }

    /// α(t) = θ̂·√(T − t).
    pub fn alpha(&self, t: f64) -> Result<f64> {
        Ok(self.alpha_tau(self.time_to_maturity(t)?))
    }

    pub fn alpha_tau(&self, tau: f64) -> f64 {
        self.effective_theta() * tau.max(0.0).sqrt()
    }

    /// Kernel of the terminal dual state for a remaining horizon τ ≥ 0.
    pub fn kernel(&self, regime: Regime, tau: f64) -> KernelParams {
        let theta = self.effective_theta();
        let alpha = self.alpha_tau(tau);
        let drift_shift = match regime {
            Regime::Discounted => -0.5 * alpha * alpha,
            Regime::WithRate => -(self.r + 0.5 * theta * theta) * tau,
        };
        KernelParams { tau, alpha, drift_shift }
    }

    /// Rate entering the first-order term of the HJB equations in this regime.
    pub fn effective_rate(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Discounted => 0.0,
            Regime::WithRate => self.r,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market(r: f64, mu: f64, sigma: f64) -> MarketModel {
        MarketModel::new(r, mu, sigma, 1.0, Constraint::Unconstrained).unwrap()
    }

    #[test]
    fn rejects_invalid_markets() {
        assert!(MarketModel::new(0.0, 0.0, 1.0, 1.0, Constraint::Unconstrained).is_err());
        assert!(MarketModel::new(0.0, 0.1, 0.0, 1.0, Constraint::Unconstrained).is_err());
        assert!(MarketModel::new(0.0, 0.1, 0.2, 0.0, Constraint::Unconstrained).is_err());
        assert!(MarketModel::new(-0.01, 0.1, 0.2, 1.0, Constraint::Unconstrained).is_err());
    }

    #[test]
    fn effective_theta_values() {
        assert!((market(0.05, 0.09, 0.2).effective_theta() - 0.2).abs() < 1e-15);
        let nss = MarketModel::new(0.0, 0.04, 0.2, 1.0, Constraint::NoShortSelling).unwrap();
        assert!((nss.effective_theta() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn alpha_values() {
        let m = market(0.0, 0.04, 0.2);
        assert!((m.alpha(0.0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(m.alpha(1.0).unwrap(), 0.0);
        let m4 = MarketModel::new(0.0, 0.06, 0.2, 4.0, Constraint::Unconstrained).unwrap();
        assert!((m4.alpha(0.0).unwrap() - 0.6).abs() < 1e-15);
        assert!(m.alpha(1.5).is_err());
        assert!(m.alpha(-0.1).is_err());
    }

    #[test]
    fn kernel_shifts() {
        let m = MarketModel::new(0.05, 0.09, 0.2, 2.0, Constraint::Unconstrained).unwrap();
        let k = m.kernel(Regime::Discounted, 1.0);
        assert!((k.drift_shift + 0.02).abs() < 1e-15);
        let k = m.kernel(Regime::WithRate, 1.0);
        assert!((k.drift_shift + 0.07).abs() < 1e-15);
        assert_eq!(m.kernel(Regime::WithRate, 0.0).alpha, 0.0);
    }

    #[test]
    fn alpha_is_non_increasing_in_time() {
        let m = market(0.0, 0.04, 0.2);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let a = m.alpha(i as f64 / 100.0).unwrap();
            assert!(a <= prev);
            prev = a;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn theta_scale_invariance() {
        let base = market(0.01, 0.05, 0.2);
        for c in [0.5, 2.0, 7.0] {
            let scaled = MarketModel::new(0.01, 0.01 + c * 0.04, c * 0.2, 1.0, Constraint::Unconstrained).unwrap();
            assert!((scaled.effective_theta() - base.effective_theta()).abs() < 1e-14);
        }
    }
}
