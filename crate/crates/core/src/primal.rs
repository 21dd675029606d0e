//! Primal value u(t, x) and optimal feedback control, recovered from the dual
//! surface by Legendre inversion: `v_y(t, y) + x = 0`, `u = v + xy`.
//!
//! In the discounted regime wealth is measured in time-T money, i.e. the
//! forward value `x·e^{r(T−t)}` (see [`PrimalValueSurface::forward_wealth`]).

use crate::dualvalue::{DualValueSurface, NEAR_MATURITY_ALPHA};
use crate::error::{domain, Error, Result};
use crate::market::Regime;
use crate::utility::Utility;

pub const Y_MIN: f64 = 1e-12;
pub const Y_MAX: f64 = 1e12;
pub const DEFAULT_ROOT_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;
const NEWTON_STEPS: usize = 5;

/// Dual point for a wealth level; `clamped` marks a root beyond [`Y_MAX`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualPoint {
    pub y: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct PrimalValueSurface {
    dual: DualValueSurface,
    utility: Utility,
    x_star: f64,
    tol: f64,
}

impl PrimalValueSurface {
    pub fn new(dual: DualValueSurface) -> Self {
        Self::with_tolerance(dual, DEFAULT_ROOT_TOL)
    }

    pub fn with_tolerance(dual: DualValueSurface, tol: f64) -> Self {
        let x_star = -dual.dual().slope_at_zero();
        let utility = dual.dual().primal();
        Self { dual, utility, x_star, tol }
    }

    pub fn dual_surface(&self) -> &DualValueSurface {
        &self.dual
    }

    pub fn utility(&self) -> &Utility {
        &self.utility
    }

    /// Threshold −Ũ′(0) above which the value is flat; +∞ for unbounded utilities.
    pub fn x_star(&self) -> f64 {
        self.x_star
    }

    /// Converts current wealth into the units the surface is expressed in.
    pub fn forward_wealth(&self, t: f64, x: f64) -> Result<f64> {
        let m = self.dual.market();
        Ok(match self.dual.regime() {
            Regime::Discounted => x * (m.r() * m.time_to_maturity(t)?).exp(),
            Regime::WithRate => x,
        })
    }

    fn tau_of(&self, t: f64) -> Result<f64> {
        self.dual.market().time_to_maturity(t)
    }

    fn at_maturity(&self, tau: f64) -> bool {
        self.dual.market().alpha_tau(tau) < NEAR_MATURITY_ALPHA
    }

    fn check_interior(&self, tau: f64, x: f64) -> Result<()> {
        if !(x > 0.0) {
            return Err(domain(format!("wealth x = {x} must be positive")));
        }
        if x >= self.x_star {
            return Err(Error::AboveThreshold { x, x_star: self.x_star });
        }
        if self.at_maturity(tau) {
            return Err(Error::Degenerate("Legendre inversion needs t < T".into()));
        }
        Ok(())
    }

    pub fn y_of_x(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.dual_point_tau(self.tau_of(t)?, x)?.y)
    }

    pub fn y_of_x_tau(&self, tau: f64, x: f64) -> Result<f64> {
        Ok(self.dual_point_tau(tau, x)?.y)
    }

    /// Root of v_y(τ, y) + x = 0: bisection on ln y, then Newton with y·v_yy.
    pub fn dual_point_tau(&self, tau: f64, x: f64) -> Result<DualPoint> {
        self.check_interior(tau, x)?;
        let g = |ln_y: f64| -> Result<f64> { Ok(self.dual.v_y_tau(tau, ln_y.exp())? + x) };
        let (ln_min, ln_max) = (Y_MIN.ln(), Y_MAX.ln());

        // expand outward from y = 1 by decades
        let (mut lo, mut hi) = (0.0_f64, 0.0_f64);
        let mut g_lo = g(lo)?;
        let mut g_hi = g_lo;
        let step = std::f64::consts::LN_10;
        while g_lo > 0.0 {
            if lo <= ln_min {
                return Err(Error::Numeric(format!("no dual root bracketed above y = {Y_MIN} for x = {x}")));
            }
            hi = lo;
            g_hi = g_lo;
            lo = (lo - step).max(ln_min);
            g_lo = g(lo)?;
        }
        while g_hi < 0.0 {
            if hi >= ln_max {
                return Ok(DualPoint { y: Y_MAX, clamped: true });
            }
            lo = hi;
            g_lo = g_hi;
            hi = (hi + step).min(ln_max);
            g_hi = g(hi)?;
        }
        if g_lo == 0.0 {
            return Ok(DualPoint { y: lo.exp(), clamped: false });
        }

        let target = self.tol * (1.0 + x);
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..MAX_BISECTIONS {
            mid = 0.5 * (lo + hi);
            let gm = g(mid)?;
            if gm.abs() <= target * 1e-3 || hi - lo < 1e-10 {
                break;
            }
            if gm < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Newton in ln y: d/d(ln y) v_y = y·v_yy
        let mut ln_y = mid;
        for _ in 0..NEWTON_STEPS {
            let y = ln_y.exp();
            let d = self.dual.derivatives_tau(tau, y)?;
            let resid = d.v_y + x;
            if resid.abs() <= target * 1e-3 || !(d.v_yy > 0.0) {
                break;
            }
            let next = ln_y - resid / (y * d.v_yy);
            if !(next > lo - 1e-9 && next < hi + 1e-9) {
                break;
            }
            ln_y = next;
        }
        let y = ln_y.exp();
        let resid = self.dual.v_y_tau(tau, y)? + x;
        if resid.abs() > target {
            return Err(Error::Numeric(format!("dual root residual {resid:e} above tolerance at x = {x}")));
        }
        Ok(DualPoint { y, clamped: false })
    }

    pub fn u(&self, t: f64, x: f64) -> Result<f64> {
        self.u_tau(self.tau_of(t)?, x)
    }

    pub fn u_tau(&self, tau: f64, x: f64) -> Result<f64> {
        if x.is_nan() || x < 0.0 {
            return Err(domain(format!("wealth x = {x} must be non-negative")));
        }
        if self.at_maturity(tau) {
            return self.utility.eval(x);
        }
        if x >= self.x_star {
            return Ok(self.dual.dual().value_at_zero());
        }
        if x == 0.0 {
            return Ok(self.dual.dual().value_at_infinity());
        }
        let p = self.dual_point_tau(tau, x)?;
        Ok(self.dual.v_tau(tau, p.y)? + x * p.y)
    }

    pub fn u_x(&self, t: f64, x: f64) -> Result<f64> {
        self.y_of_x(t, x)
    }

    pub fn u_xx(&self, t: f64, x: f64) -> Result<f64> {
        self.u_xx_tau(self.tau_of(t)?, x)
    }

    pub fn u_xx_tau(&self, tau: f64, x: f64) -> Result<f64> {
        let y = self.y_of_x_tau(tau, x)?;
        Ok(-1.0 / self.dual.v_yy_tau(tau, y)?)
    }

    /// Optimal proportion π* = −(θ̂/σ)·u_x/(x·u_xx); zero on the flat region.
    pub fn feedback_control(&self, t: f64, x: f64) -> Result<f64> {
        self.feedback_control_tau(self.tau_of(t)?, x)
    }

    pub fn feedback_control_tau(&self, tau: f64, x: f64) -> Result<f64> {
        if x >= self.x_star {
            return Ok(0.0);
        }
        Ok(self.risky_amount(tau, x)? / x)
    }

    /// Amount held in the risky asset, A(τ, x) = (θ̂/σ)·y·v_yy at y = y(τ, x).
    pub fn risky_amount(&self, tau: f64, x: f64) -> Result<f64> {
        if x >= self.x_star {
            return Ok(0.0);
        }
        let y = self.y_of_x_tau(tau, x)?;
        let m = self.dual.market();
        Ok(m.effective_theta() / m.sigma() * y * self.dual.v_yy_tau(tau, y)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{Constraint, MarketModel};
    use crate::utility::{CappedUtility, PowerTailUtility};

    fn capped() -> PrimalValueSurface {
        let m = MarketModel::new(0.0, 0.04, 0.2, 1.0, Constraint::Unconstrained).unwrap();
        let dual = Utility::Capped(CappedUtility::new(1.0).unwrap()).dual();
        PrimalValueSurface::new(DualValueSurface::with_default_backend(m, dual, Regime::Discounted).unwrap())
    }

    #[test]
    fn capped_anchor_values() {
        let s = capped();
        assert!((s.y_of_x(0.0, 0.5).unwrap() - 0.980_198_673_306_755).abs() < 1e-12);
        assert!((s.u(0.0, 0.5).unwrap() - 0.579_259_709_439_103).abs() < 1e-12);
        assert!((s.feedback_control(0.0, 0.5).unwrap() - 3.989_422_804_014_33).abs() < 1e-10);
        assert!((s.u_x(0.0, 0.5).unwrap() - 0.980_198_673_306_755).abs() < 1e-12);
        assert!(s.u_xx(0.0, 0.5).unwrap() < 0.0);
    }

    #[test]
    fn flat_region_and_maturity() {
        let s = capped();
        assert_eq!(s.x_star(), 1.0);
        for t in [0.0, 0.5, 1.0] {
            assert_eq!(s.u(t, 1.0).unwrap(), 1.0);
            assert_eq!(s.u(t, 3.0).unwrap(), 1.0);
        }
        assert_eq!(s.feedback_control(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(s.u(1.0, 0.3).unwrap(), 0.3);
        assert!(matches!(s.y_of_x(0.0, 1.0), Err(Error::AboveThreshold { .. })));
        assert!(s.y_of_x(1.0, 0.5).is_err());
        assert!(s.u(0.0, -0.1).is_err());
    }

    #[test]
    fn round_trip_and_monotonicity() {
        let s = capped();
        let mut prev = f64::INFINITY;
        for i in 1..50 {
            let x = i as f64 / 50.0;
            let y = s.y_of_x(0.25, x).unwrap();
            assert!((s.dual_surface().v_y(0.25, y).unwrap() + x).abs() < 1e-11);
            assert!(y < prev);
            prev = y;
        }
        let near = s.y_of_x(0.0, 0.999_999).unwrap();
        assert!(near < 0.5);
    }

    #[test]
    fn tiny_wealth_clamps_dual_point() {
        let m = MarketModel::new(0.0, 0.04, 0.2, 1.0, Constraint::Unconstrained).unwrap();
        let u = PowerTailUtility::pure(0.5, 1.0, 0.0).unwrap();
        let dual = DualValueSurface::with_default_backend(m, Utility::PowerTail(u).dual(), Regime::Discounted).unwrap();
        let s = PrimalValueSurface::new(dual);
        let p = s.dual_point_tau(1.0, 1e-30).unwrap();
        assert!(p.clamped && p.y == Y_MAX);
        assert!(!s.dual_point_tau(1.0, 1e-6).unwrap().clamped);
    }

    #[test]
    fn merton_amount() {
        let m = MarketModel::new(0.05, 0.09, 0.2, 40.0, Constraint::Unconstrained).unwrap();
        let u = PowerTailUtility::pure(0.5, 1.0, 0.0).unwrap();
        let dual = DualValueSurface::with_default_backend(m, Utility::PowerTail(u).dual(), Regime::WithRate).unwrap();
        let s = PrimalValueSurface::new(dual);
        assert!(s.x_star().is_infinite());
        for tau in [1.0, 10.0, 40.0] {
            let a = s.risky_amount(tau, 1.0).unwrap();
            assert!((a / 2.0 - 1.0).abs() < 1e-8, "tau={tau} a={a}");
            let pi = s.feedback_control_tau(tau, 1.0).unwrap();
            assert!((a - pi).abs() < 1e-12);
        }
    }
}
