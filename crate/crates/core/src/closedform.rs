//! Exact formulas for the capped utility U(x) = x ∧ H in the discounted regime.

use crate::error::{domain, invalid, Error, Result};
use crate::market::MarketModel;
use crate::normal::{cdf, inv_cdf, pdf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CappedSolution {
    h: f64,
    market: MarketModel,
}

impl CappedSolution {
    pub fn new(h: f64, market: MarketModel) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid(format!("cap H = {h} must be positive")));
        }
        Ok(Self { h, market })
    }

    pub fn cap(&self) -> f64 {
        self.h
    }

    pub fn market(&self) -> &MarketModel {
        &self.market
    }

    /// Z₀ = Φ⁻¹(x/H).
    pub fn z0(&self, x: f64) -> Result<f64> {
        if !(x > 0.0 && x < self.h) {
            return Err(domain(format!("wealth x = {x} must lie in (0, {})", self.h)));
        }
        Ok(inv_cdf(x / self.h))
    }

    /// u(t, x) = H·Φ(Z₀ + α(t)).
    pub fn u(&self, t: f64, x: f64) -> Result<f64> {
        let z = self.z0(x)?;
        let a = self.market.alpha(t)?;
        if a == 0.0 {
            return Ok(x);
        }
        Ok(self.h * cdf(z + a))
    }

    /// π*(t, x) = (θ̂/σ)·H·φ(Z₀)/(x·α(t)).
    pub fn pi(&self, t: f64, x: f64) -> Result<f64> {
        let z = self.z0(x)?;
        let a = self.market.alpha(t)?;
        if a == 0.0 {
            return Err(Error::Degenerate("capped control is undefined at maturity".into()));
        }
        let m = &self.market;
        Ok(m.effective_theta() / m.sigma() * self.h * pdf(z) / (x * a))
    }

    /// y(t, x) = exp(−α·Z₀ − α²/2).
    pub fn y(&self, t: f64, x: f64) -> Result<f64> {
        let z = self.z0(x)?;
        let a = self.market.alpha(t)?;
        Ok((-a * z - 0.5 * a * a).exp())
    }

    /// (P(X_T = H), P(X_T = 0)) when starting from x at time 0.
    pub fn terminal_probs(&self, x: f64) -> Result<(f64, f64)> {
        let z = self.z0(x)?;
        let a = self.market.alpha(0.0)?;
        Ok((cdf(z + a), cdf(-z - a)))
    }

    /// (g(H), g′(H)) for the value g(H) = H·Φ(Φ⁻¹(x/H) + θ√T) at this market.
    pub fn h_sensitivity(&self, x: f64) -> Result<(f64, f64)> {
        h_sensitivity(&self.market, self.h, x)
    }
}

/// g(H) = H·Φ(Φ⁻¹(x/H) + θ√T) and g′(H) = Φ(Φ⁻¹(x/H) + θ√T) − (x/H)·exp(−θ√T·Φ⁻¹(x/H) − θ²T/2).
pub fn h_sensitivity(market: &MarketModel, h: f64, x: f64) -> Result<(f64, f64)> {
    let s = CappedSolution::new(h, *market)?;
    let z = s.z0(x)?;
    let a = market.alpha(0.0)?;
    let g = h * cdf(z + a);
    let dg = cdf(z + a) - (x / h) * (-a * z - 0.5 * a * a).exp();
    Ok((g, dg))
}
