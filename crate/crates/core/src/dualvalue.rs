//! Dual value surface v(t, y) = E[Ũ(Y_T)] and its y-derivatives.
//!
//! The terminal dual state is log-normal, `ln Y_T = ln y + shift − αZ`, with
//! α and the shift taken from [`MarketModel::kernel`].

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::market::{KernelParams, MarketModel, Regime};
use crate::normal::{cdf, cdf_diff, pdf};
use crate::quadrature::{integrate_against_normal, GaussHermite};
use crate::utility::{DualUtility, PiecewiseDual};

pub const DEFAULT_QUADRATURE_ORDER: usize = 128;

/// Below this α the surface is treated as being at maturity.
pub const NEAR_MATURITY_ALPHA: f64 = 1e-6;

const Z_CUTOFF: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    ClosedFormPiecewise,
    ClosedFormCappedPower,
    Quadrature,
}

/// v together with its first two y-derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualDerivatives {
    pub v: f64,
    pub v_y: f64,
    pub v_yy: f64,
}

#[derive(Debug, Clone)]
pub struct DualValueSurface {
    market: MarketModel,
    dual: DualUtility,
    regime: Regime,
    backend: Backend,
    hermite: GaussHermite,
}

impl DualValueSurface {
    pub fn new(
        market: MarketModel,
        dual: DualUtility,
        regime: Regime,
        backend: Backend,
        quadrature_order: usize,
    ) -> Result<Self> {
        match backend {
            Backend::ClosedFormPiecewise => {
                if !matches!(dual, DualUtility::Piecewise(_)) {
                    return Err(invalid("closed-form piecewise backend needs a piecewise-linear utility"));
                }
            }
            Backend::ClosedFormCappedPower => {
                if !matches!(dual, DualUtility::CappedPower(_)) {
                    return Err(invalid("closed-form capped-power backend needs a capped power utility"));
                }
            }
            Backend::Quadrature => {}
        }
        if backend != Backend::Quadrature && regime != Regime::Discounted {
            return Err(invalid("closed-form backends are only available in the discounted regime"));
        }
        let hermite = GaussHermite::new(quadrature_order)?;
        Ok(Self { market, dual, regime, backend, hermite })
    }

    /// Closed form when one exists for this utility and regime, quadrature otherwise.
    pub fn with_default_backend(market: MarketModel, dual: DualUtility, regime: Regime) -> Result<Self> {
        let backend = match (&dual, regime) {
            (DualUtility::Piecewise(_), Regime::Discounted) => Backend::ClosedFormPiecewise,
            (DualUtility::CappedPower(_), Regime::Discounted) => Backend::ClosedFormCappedPower,
            _ => Backend::Quadrature,
        };
        Self::new(market, dual, regime, backend, DEFAULT_QUADRATURE_ORDER)
    }

    pub fn market(&self) -> &MarketModel {
        &self.market
    }
    pub fn dual(&self) -> &DualUtility {
        &self.dual
    }
    pub fn regime(&self) -> Regime {
        self.regime
    }
    pub fn backend(&self) -> Backend {
        self.backend
    }
    pub fn quadrature_order(&self) -> usize {
        self.hermite.order()
    }

    fn tau_of(&self, t: f64) -> Result<f64> {
        self.market.time_to_maturity(t)
    }

    pub fn v(&self, t: f64, y: f64) -> Result<f64> {
        self.v_tau(self.tau_of(t)?, y)
    }

    pub fn v_y(&self, t: f64, y: f64) -> Result<f64> {
        self.v_y_tau(self.tau_of(t)?, y)
    }

    pub fn v_yy(&self, t: f64, y: f64) -> Result<f64> {
        self.v_yy_tau(self.tau_of(t)?, y)
    }

    pub fn derivatives(&self, t: f64, y: f64) -> Result<DualDerivatives> {
        self.derivatives_tau(self.tau_of(t)?, y)
    }

    fn kernel(&self, tau: f64, y: f64) -> Result<KernelParams> {
        if !(y > 0.0) || y.is_infinite() {
            return Err(domain(format!("dual argument y = {y} must be positive and finite")));
        }
        if !(tau >= 0.0) {
            return Err(domain(format!("time to maturity {tau} must be non-negative")));
        }
        Ok(self.market.kernel(self.regime, tau))
    }

    /// v as a function of time to maturity τ (not limited to the market horizon).
    pub fn v_tau(&self, tau: f64, y: f64) -> Result<f64> {
        let k = self.kernel(tau, y)?;
        if k.alpha < NEAR_MATURITY_ALPHA {
            return Ok(self.dual.value(y));
        }
        Ok(match (self.backend, &self.dual) {
            (Backend::ClosedFormPiecewise, DualUtility::Piecewise(d)) => closed_piecewise(d, k.alpha, y).v,
            (Backend::ClosedFormCappedPower, DualUtility::CappedPower(u)) => {
                capped_power_v(u.cap(), u.p(), k.alpha, y)
            }
            _ => self.quadrature(k, y, 0),
        })
    }

    pub fn v_y_tau(&self, tau: f64, y: f64) -> Result<f64> {
        let k = self.kernel(tau, y)?;
        if k.alpha < NEAR_MATURITY_ALPHA {
            return Ok(self.dual.slope(y));
        }
        Ok(match (self.backend, &self.dual) {
            (Backend::ClosedFormPiecewise, DualUtility::Piecewise(d)) => closed_piecewise(d, k.alpha, y).v_y,
            (Backend::ClosedFormCappedPower, DualUtility::CappedPower(u)) => {
                capped_power_v_y(u.cap(), u.p(), k.alpha, y)
            }
            _ => self.quadrature(k, y, 1),
        })
    }

    pub fn v_yy_tau(&self, tau: f64, y: f64) -> Result<f64> {
        let k = self.kernel(tau, y)?;
        if k.alpha < NEAR_MATURITY_ALPHA {
            return Err(Error::Degenerate("second derivative at maturity is not a function".into()));
        }
        Ok(match (self.backend, &self.dual) {
            (Backend::ClosedFormPiecewise, DualUtility::Piecewise(d)) => closed_piecewise(d, k.alpha, y).v_yy,
            (Backend::ClosedFormCappedPower, DualUtility::CappedPower(u)) => {
                capped_power_v_yy(u.cap(), u.p(), k.alpha, y)
            }
            _ => self.quadrature(k, y, 2),
        })
    }

    pub fn derivatives_tau(&self, tau: f64, y: f64) -> Result<DualDerivatives> {
        let k = self.kernel(tau, y)?;
        if k.alpha < NEAR_MATURITY_ALPHA {
            return Err(Error::Degenerate("second derivative at maturity is not a function".into()));
        }
        if let (Backend::ClosedFormPiecewise, DualUtility::Piecewise(d)) = (self.backend, &self.dual) {
            return Ok(closed_piecewise(d, k.alpha, y));
        }
        Ok(DualDerivatives { v: self.v_tau(tau, y)?, v_y: self.v_y_tau(tau, y)?, v_yy: self.v_yy_tau(tau, y)? })
    }

    /// The displayed capped-power value, whatever the configured backend.
    pub fn v_capped_power(&self, t: f64, y: f64) -> Result<f64> {
        let (u, k) = self.capped_power_args(t, y)?;
        Ok(capped_power_v(u.0, u.1, k.alpha, y))
    }

    pub fn v_capped_power_y(&self, t: f64, y: f64) -> Result<f64> {
        let (u, k) = self.capped_power_args(t, y)?;
        Ok(capped_power_v_y(u.0, u.1, k.alpha, y))
    }

    fn capped_power_args(&self, t: f64, y: f64) -> Result<((f64, f64), KernelParams)> {
        let DualUtility::CappedPower(u) = &self.dual else {
            return Err(invalid("surface does not carry a capped power utility"));
        };
        let k = self.kernel(self.tau_of(t)?, y)?;
        if k.alpha < NEAR_MATURITY_ALPHA {
            return Err(Error::Degenerate("capped-power closed form needs t < T".into()));
        }
        Ok(((u.cap(), u.p()), k))
    }

    /// E[G^order · Ũ^{(order)}(yG)] (plus kink contributions for order 2), G = Y_T/y.
    fn quadrature(&self, k: KernelParams, y: f64, order: usize) -> f64 {
        match &self.dual {
            DualUtility::Constant(c) => {
                if order == 0 {
                    *c
                } else {
                    0.0
                }
            }
            DualUtility::Piecewise(d) => lognormal_piecewise(d, k, y, order),
            dual => {
                let (alpha, shift) = (k.alpha, k.drift_shift);
                let g = |z: f64| (shift - alpha * z).exp();
                let f = |z: f64| {
                    let gz = g(z);
                    match order {
                        0 => dual.value(y * gz),
                        1 => gz * dual.slope(y * gz),
                        _ => gz * gz * dual.curvature(y * gz),
                    }
                };
                let breaks = dual.breaks();
                let smooth_part = if breaks.is_empty() {
                    self.hermite.expect_normal(f)
                } else {
                    let q = dual.growth_exponent();
                    let lo = -Z_CUTOFF - (order as f64 * alpha).max(0.0);
                    let hi = Z_CUTOFF + (-q * alpha).max(0.0);
                    let zb: Vec<f64> = breaks.iter().map(|b| (y.ln() + shift - b.ln()) / alpha).collect();
                    integrate_against_normal(f, lo, hi, &zb)
                };
                if order < 2 {
                    return smooth_part;
                }
                smooth_part + kink_terms(dual, k, y)
            }
        }
    }

    /// The four boundary limits of v and v_y, probed at y = 1e−6 and y = 1e6.
    pub fn limits_report(&self, t: f64) -> Result<LimitsReport> {
        if t >= self.market.horizon() {
            return Err(domain("limits are reported for t < T"));
        }
        let (small, large) = (1e-6, 1e6);
        let v_small = self.v(t, small)?;
        let v_y_small = self.v_y(t, small)?;
        let v_large = self.v(t, large)?;
        let v_y_large = self.v_y(t, large)?;
        Ok(LimitsReport {
            t,
            v_small,
            v_y_small,
            v_large,
            v_y_large,
            v_small_deviation: deviation(v_small, self.dual.value_at_zero()),
            v_y_small_deviation: deviation(v_y_small, self.dual.slope_at_zero()),
            v_large_deviation: deviation(v_large, self.dual.value_at_infinity()),
            v_y_large_deviation: v_y_large.abs(),
        })
    }
}

fn deviation(value: f64, target: f64) -> f64 {
    if target.is_infinite() {
        // an unbounded target is approached when the probe has the same sign and is large
        if value.signum() == target.signum() {
            1.0 / value.abs()
        } else {
            f64::INFINITY
        }
    } else {
        (value - target).abs()
    }
}

/// Probes of v and v_y near y = 0 and y = ∞ with their distance from the limits
/// Ũ(0), Ũ′(0), U(0) and 0. For an infinite limit the deviation is 1/|probe|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitsReport {
    pub t: f64,
    pub v_small: f64,
    pub v_y_small: f64,
    pub v_large: f64,
    pub v_y_large: f64,
    pub v_small_deviation: f64,
    pub v_y_small_deviation: f64,
    pub v_large_deviation: f64,
    pub v_y_large_deviation: f64,
}

/// Σ J_b·b·φ(d_b)/(y²α): the Dirac part of Ũ″ smeared by the kernel.
fn kink_terms(dual: &DualUtility, k: KernelParams, y: f64) -> f64 {
    dual.kinks()
        .iter()
        .map(|&(b, jump)| {
            let d = ((b / y).ln() - k.drift_shift) / k.alpha;
            jump * b * pdf(d) / (y * y * k.alpha)
        })
        .sum()
}

/// Exact integration of a piecewise-linear dual against the log-normal law.
fn lognormal_piecewise(d: &PiecewiseDual, k: KernelParams, y: f64, order: usize) -> f64 {
    let (a, m) = (k.alpha, y.ln() + k.drift_shift);
    if order == 2 {
        return kink_terms(&DualUtility::Piecewise(d.clone()), k, y);
    }
    let mean_factor = (m + 0.5 * a * a).exp();
    let mut acc = 0.0;
    for s in d.segments() {
        let (ll, lu) = (s.lower.ln(), s.upper.ln());
        let first = mean_factor * cdf_diff((lu - m - a * a) / a, (ll - m - a * a) / a);
        if order == 0 {
            acc += s.slope * first + s.intercept * cdf_diff((lu - m) / a, (ll - m) / a);
        } else {
            acc += s.slope * first / y;
        }
    }
    acc
}

/// c̄_i(y) = (ln y − ln c_i)/α − α/2 for i = 0..=N+1, with c̄_0 = −∞ and c̄_{N+1} = +∞.
fn c_bar(d: &PiecewiseDual, alpha: f64, y: f64) -> Vec<f64> {
    let u = d.primal();
    (0..=u.len() + 1).map(|i| (y.ln() - u.slope(i).ln()) / alpha - 0.5 * alpha).collect()
}

/// Sum of the A_i terms and their analytic y-derivatives (discounted regime).
fn closed_piecewise(d: &PiecewiseDual, alpha: f64, y: f64) -> DualDerivatives {
    let u = d.primal();
    let cb = c_bar(d, alpha, y);
    let (mut v, mut v_y, mut v_yy) = (0.0, 0.0, 0.0);
    for i in 0..=u.len() {
        let x_i = u.breakpoint(i);
        let level = u.slope(i + 1) * x_i + u.intercepts()[i];
        let shifted = cdf_diff(cb[i + 1] + alpha, cb[i] + alpha);
        v += -x_i * y * shifted + level * cdf_diff(cb[i + 1], cb[i]);
        v_y -= x_i * shifted;
        if x_i > 0.0 {
            v_yy -= x_i * (pdf(cb[i + 1] + alpha) - pdf(cb[i] + alpha));
        }
    }
    DualDerivatives { v, v_y, v_yy: v_yy / (y * alpha) }
}

fn capped_power_terms(p: f64, alpha: f64, y: f64) -> (f64, f64, f64) {
    let c1 = y.ln() / alpha - 0.5 * alpha;
    let c2 = c1 - p.ln() / alpha;
    let p1 = 1.0 - p;
    (c1, c2, p1)
}

/// Capped-power dual value with p₁ = 1 − p, c₁ = ln y/α − α/2, c₂ = c₁ − ln p/α.
pub fn capped_power_v(h: f64, p: f64, alpha: f64, y: f64) -> f64 {
    let (c1, c2, p1) = capped_power_terms(p, alpha, y);
    let tail = p1 / p
        * p.powf(1.0 / p1)
        * (-p / p1 * y.ln() + alpha * alpha * p / (2.0 * p1 * p1)).exp()
        * cdf(-c2 + alpha * p / p1);
    h * (tail + cdf_diff(c2, c1) - y * cdf_diff(c2 + alpha, c1 + alpha))
}

pub fn capped_power_v_y(h: f64, p: f64, alpha: f64, y: f64) -> f64 {
    let (c1, c2, p1) = capped_power_terms(p, alpha, y);
    let growth = (-(y / p).ln() / p1 + alpha * alpha * p / (2.0 * p1 * p1)).exp();
    -h * (growth * cdf(-c2 + alpha * p / p1) + cdf_diff(c2 + alpha, c1 + alpha))
}

pub fn capped_power_v_yy(h: f64, p: f64, alpha: f64, y: f64) -> f64 {
    let (c1, c2, p1) = capped_power_terms(p, alpha, y);
    let growth = (-(y / p).ln() / p1 + alpha * alpha * p / (2.0 * p1 * p1)).exp();
    h * (growth * cdf(-c2 + alpha * p / p1) / (p1 * y) + pdf(c1 + alpha) / (y * alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Constraint;
    use crate::utility::{CappedPowerUtility, CappedUtility, PiecewiseLinearUtility, Utility};

    fn market() -> MarketModel {
        MarketModel::new(0.0, 0.04, 0.2, 1.0, Constraint::Unconstrained).unwrap()
    }

    fn capped_surface(backend: Backend) -> DualValueSurface {
        let dual = Utility::Capped(CappedUtility::new(1.0).unwrap()).dual();
        DualValueSurface::new(market(), dual, Regime::Discounted, backend, 128).unwrap()
    }

    #[test]
    fn capped_value_at_anchor() {
        let y = (-0.02f64).exp();
        for b in [Backend::ClosedFormPiecewise, Backend::Quadrature] {
            let s = capped_surface(b);
            assert!((s.v(0.0, y).unwrap() - 0.089_160_372_785_725_4).abs() < 1e-12);
            assert!((s.v_y(0.0, y).unwrap() + 0.5).abs() < 1e-12);
            assert!((s.v_yy(0.0, y).unwrap() - 2.035_007_245_294_36).abs() < 1e-11);
        }
    }

    #[test]
    fn maturity_returns_terminal_data() {
        let s = capped_surface(Backend::ClosedFormPiecewise);
        assert_eq!(s.v(1.0, 0.3).unwrap(), 0.7);
        assert_eq!(s.v_y(1.0, 0.3).unwrap(), -1.0);
        assert!(matches!(s.v_yy(1.0, 0.3), Err(Error::Degenerate(_))));
        assert!(s.v(0.0, 0.0).is_err());
        assert!(s.v(0.0, -1.0).is_err());
        assert!(s.v(1.5, 1.0).is_err());
    }

    #[test]
    fn closed_forms_need_matching_utility_and_regime() {
        let dual = Utility::Capped(CappedUtility::new(1.0).unwrap()).dual();
        assert!(DualValueSurface::new(market(), dual.clone(), Regime::WithRate, Backend::ClosedFormPiecewise, 64).is_err());
        assert!(DualValueSurface::new(market(), dual.clone(), Regime::Discounted, Backend::ClosedFormCappedPower, 64).is_err());
        assert!(DualValueSurface::new(market(), dual, Regime::WithRate, Backend::Quadrature, 64).is_ok());
    }

    #[test]
    fn three_piece_derivative_matches_displayed_form() {
        let (h, big_h) = (0.4, 1.0);
        let u = PiecewiseLinearUtility::new(vec![h, big_h], vec![3.0, 1.0], big_h).unwrap();
        let s = DualValueSurface::with_default_backend(market(), Utility::Piecewise(u).dual(), Regime::Discounted).unwrap();
        let alpha = 0.2;
        for y in [0.3f64, 0.9, 1.4, 2.5, 4.0] {
            let c1 = (y.ln() - 3.0f64.ln()) / alpha - alpha / 2.0;
            let c2 = y.ln() / alpha - alpha / 2.0;
            let want = -big_h + h * cdf(c1 + alpha) + (big_h - h) * cdf(c2 + alpha);
            assert!((s.v_y(0.0, y).unwrap() - want).abs() < 1e-14);
        }
    }

    #[test]
    fn capped_power_frozen_values() {
        let s = DualValueSurface::with_default_backend(
            MarketModel::new(0.0, 0.04, 0.2, 4.0, Constraint::Unconstrained).unwrap(),
            Utility::CappedPower(CappedPowerUtility::new(1.0, 0.5).unwrap()).dual(),
            Regime::Discounted,
        )
        .unwrap();
        // α = 0.4 at t = 0
        assert!((s.v(0.0, 0.8).unwrap() - 0.270_436_702_255_275_9).abs() < 1e-13);
        assert!((s.v_yy(0.0, 0.8).unwrap() - 1.493_279_263_837_487_6).abs() < 1e-12);
        assert!((s.v(0.0, 0.3).unwrap() - 0.976_029_851_818_243_2).abs() < 1e-13);
    }

    #[test]
    fn capped_power_backends_agree() {
        let m = MarketModel::new(0.0, 0.08, 0.2, 4.0, Constraint::Unconstrained).unwrap();
        let dual = Utility::CappedPower(CappedPowerUtility::new(1.5, 0.3).unwrap()).dual();
        let closed = DualValueSurface::new(m, dual.clone(), Regime::Discounted, Backend::ClosedFormCappedPower, 128).unwrap();
        let quad = DualValueSurface::new(m, dual, Regime::Discounted, Backend::Quadrature, 128).unwrap();
        for t in [0.0, 1.0, 3.0, 3.9] {
            for y in [0.05, 0.2, 0.5, 0.9, 1.3, 3.0] {
                let a = closed.derivatives(t, y).unwrap();
                let b = quad.derivatives(t, y).unwrap();
                assert!((a.v - b.v).abs() < 1e-10 * (1.0 + a.v.abs()), "v t={t} y={y}");
                assert!((a.v_y - b.v_y).abs() < 1e-10 * (1.0 + a.v_y.abs()), "v_y t={t} y={y}");
                assert!((a.v_yy - b.v_yy).abs() < 1e-9 * (1.0 + a.v_yy.abs()), "v_yy t={t} y={y}");
            }
        }
    }

    #[test]
    fn capped_limits() {
        let s = capped_surface(Backend::ClosedFormPiecewise);
        let r = s.limits_report(0.5).unwrap();
        assert!(r.v_small_deviation < 1e-3);
        assert!(r.v_y_small_deviation < 1e-3);
        assert!(r.v_large_deviation < 1e-3);
        assert!(r.v_y_large_deviation < 1e-6);
    }

    #[test]
    fn constant_dual_is_flat() {
        let s = DualValueSurface::with_default_backend(market(), DualUtility::Constant(2.5), Regime::WithRate).unwrap();
        assert_eq!(s.v(0.0, 0.7).unwrap(), 2.5);
        assert_eq!(s.v_y(0.0, 0.7).unwrap(), 0.0);
        assert_eq!(s.v_yy(0.0, 0.7).unwrap(), 0.0);
    }
}
