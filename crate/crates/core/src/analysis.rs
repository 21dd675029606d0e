//! PDE residual oracles for the dual and primal equations, turnpike sweeps and
//! the small-y / large-y asymptotics of the dual value.

use rayon::prelude::*;
use serde::Serialize;

use crate::dualvalue::{Backend, DualValueSurface, DEFAULT_QUADRATURE_ORDER};
use crate::error::{domain, invalid, Error, Result};
use crate::market::{MarketModel, Regime};
use crate::primal::PrimalValueSurface;
use crate::utility::{dual_exponent, PowerTailUtility, Utility};

/// Default time-difference step as a fraction of the horizon.
pub const DEFAULT_TIME_STEP_FRACTION: f64 = 1e-4;
/// Rows with τ below this fraction of the horizon are flagged and excluded.
pub const NEAR_TERMINAL_FRACTION: f64 = 1e-2;
/// Calibration threshold for the turnpike gap at the largest τ; the limit
/// statement comes without a rate.
pub const TURNPIKE_GAP_THRESHOLD: f64 = 0.05;
pub const SMALL_Y_PROBES: [f64; 3] = [1e-3, 1e-4, 1e-5];
pub const LARGE_Y_PROBES: [f64; 2] = [1e3, 1e4];

/// Tensor grid of calendar times and state values (y for the dual, x for the primal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub s_points: usize,
    pub log_spacing: bool,
}

impl ResidualGrid {
    pub fn new(t: (f64, f64, usize), s: (f64, f64, usize), log_spacing: bool) -> Result<Self> {
        let g = Self {
            t_min: t.0,
            t_max: t.1,
            t_points: t.2,
            s_min: s.0,
            s_max: s.1,
            s_points: s.2,
            log_spacing,
        };
        if g.t_points == 0 || g.s_points == 0 {
            return Err(invalid("residual grid needs at least one point per axis"));
        }
        if !(g.t_min <= g.t_max && g.s_min <= g.s_max && g.s_min > 0.0) {
            return Err(invalid("residual grid ranges must be ordered with positive state values"));
        }
        Ok(g)
    }

    fn axis(lo: f64, hi: f64, n: usize, log: bool) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n)
            .map(|i| {
                let w = i as f64 / (n - 1) as f64;
                if log {
                    (lo.ln() + w * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + w * (hi - lo)
                }
            })
            .collect()
    }

    pub fn times(&self) -> Vec<f64> {
        Self::axis(self.t_min, self.t_max, self.t_points, false)
    }

    pub fn states(&self) -> Vec<f64> {
        Self::axis(self.s_min, self.s_max, self.s_points, self.log_spacing)
    }

    fn check_interior(&self, horizon: f64) -> Result<()> {
        if self.t_min < 0.0 || self.t_max >= horizon {
            return Err(domain(format!(
                "residual grid [{}, {}] must lie inside [0, {horizon})",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }
}

/// Central difference in τ, optionally Richardson-extrapolated from steps h and h/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeDifference {
    pub step: f64,
    pub richardson: bool,
}

impl TimeDifference {
    pub fn default_for(horizon: f64) -> Self {
        Self { step: DEFAULT_TIME_STEP_FRACTION * horizon, richardson: true }
    }

    pub fn plain(step: f64) -> Self {
        Self { step, richardson: false }
    }

    fn derivative(&self, f: impl Fn(f64) -> Result<f64>, tau: f64) -> Result<f64> {
        let central = |h: f64| -> Result<f64> { Ok((f(tau + h)? - f(tau - h)?) / (2.0 * h)) };
        let d = central(self.step)?;
        if !self.richardson {
            return Ok(d);
        }
        Ok((4.0 * central(0.5 * self.step)? - d) / 3.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub grid: ResidualGrid,
    pub difference: TimeDifference,
    pub max_abs_residual: f64,
    pub argmax_t: f64,
    pub argmax_state: f64,
    pub points_evaluated: usize,
    /// Times of rows excluded for lying too close to maturity.
    pub near_terminal_times: Vec<f64>,
}

fn residual_sweep(
    grid: &ResidualGrid,
    market: &MarketModel,
    diff: TimeDifference,
    states: &[f64],
    point: impl Fn(f64, f64) -> Result<f64> + Sync,
) -> Result<ResidualReport> {
    grid.check_interior(market.horizon())?;
    if !(diff.step > 0.0) {
        return Err(invalid("time-difference step must be positive"));
    }
    let horizon = market.horizon();
    let (rows, near): (Vec<f64>, Vec<f64>) = grid
        .times()
        .into_iter()
        .partition(|&t| horizon - t >= (NEAR_TERMINAL_FRACTION * horizon).max(2.0 * diff.step));
    let per_row = rows
        .par_iter()
        .map(|&t| -> Result<(f64, f64, f64)> {
            let tau = horizon - t;
            let mut best = (0.0, t, states[0]);
            for &s in states {
                let r = point(tau, s)?.abs();
                if !r.is_finite() {
                    return Err(Error::Numeric(format!("non-finite residual at t = {t}, state = {s}")));
                }
                if r > best.0 {
                    best = (r, t, s);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    let (max_abs_residual, argmax_t, argmax_state) =
        per_row.iter().copied().fold((0.0, f64::NAN, f64::NAN), |a, b| if b.0 > a.0 || a.1.is_nan() { b } else { a });
    Ok(ResidualReport {
        grid: *grid,
        difference: diff,
        max_abs_residual,
        argmax_t,
        argmax_state,
        points_evaluated: rows.len() * states.len(),
        near_terminal_times: near,
    })
}

/// Residual of v_τ − ½θ̂²y²v_yy + r̂·y·v_y with analytic y-derivatives (r̂ = 0 when discounted).
pub fn dual_residual(surface: &DualValueSurface, grid: &ResidualGrid) -> Result<ResidualReport> {
    dual_residual_with(surface, grid, TimeDifference::default_for(surface.market().horizon()))
}

pub fn dual_residual_with(
    surface: &DualValueSurface,
    grid: &ResidualGrid,
    diff: TimeDifference,
) -> Result<ResidualReport> {
    let m = surface.market();
    let theta = m.effective_theta();
    let rate = m.effective_rate(surface.regime());
    let states = grid.states();
    residual_sweep(grid, m, diff, &states, |tau, y| {
        let d = surface.derivatives_tau(tau, y)?;
        let v_tau = diff.derivative(|s| surface.v_tau(s, y), tau)?;
        Ok(v_tau - 0.5 * theta * theta * y * y * d.v_yy + rate * y * d.v_y)
    })
}

/// Residual of −u_τ − ½θ̂²u_x²/u_xx + r̂·x·u_x with u_x, u_xx from the dual.
pub fn primal_residual(surface: &PrimalValueSurface, grid: &ResidualGrid) -> Result<ResidualReport> {
    let horizon = surface.dual_surface().market().horizon();
    primal_residual_with(surface, grid, TimeDifference::default_for(horizon))
}

pub fn primal_residual_with(
    surface: &PrimalValueSurface,
    grid: &ResidualGrid,
    diff: TimeDifference,
) -> Result<ResidualReport> {
    if grid.s_max >= surface.x_star() {
        return Err(domain(format!("primal grid must stay below x* = {}", surface.x_star())));
    }
    let dual = surface.dual_surface();
    let m = dual.market();
    let theta = m.effective_theta();
    let rate = m.effective_rate(dual.regime());
    let states = grid.states();
    residual_sweep(grid, m, diff, &states, |tau, x| {
        let u_x = surface.y_of_x_tau(tau, x)?;
        let u_xx = surface.u_xx_tau(tau, x)?;
        let u_tau = diff.derivative(|s| surface.u_tau(s, x), tau)?;
        Ok(-u_tau - 0.5 * theta * theta * u_x * u_x / u_xx + rate * x * u_x)
    })
}

/// Long-horizon setup: a power-tail utility in the with-rate regime.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnpikeSpec {
    utility: PowerTailUtility,
    market: MarketModel,
    tau_grid: Vec<f64>,
    x_probe: f64,
}

impl TurnpikeSpec {
    pub fn new(utility: PowerTailUtility, market: MarketModel, tau_grid: Vec<f64>, x_probe: f64) -> Result<Self> {
        if tau_grid.is_empty() || tau_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(invalid("turnpike τ grid must be non-empty and positive"));
        }
        if tau_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("turnpike τ grid must be strictly ascending"));
        }
        if !(x_probe > 0.0 && x_probe.is_finite()) {
            return Err(invalid("turnpike wealth probe must be positive"));
        }
        let market = market.with_horizon(*tau_grid.last().expect("non-empty"))?;
        Ok(Self { utility, market, tau_grid, x_probe })
    }

    pub fn utility(&self) -> &PowerTailUtility {
        &self.utility
    }
    /// Market with horizon equal to the largest τ.
    pub fn market(&self) -> &MarketModel {
        &self.market
    }
    pub fn tau_grid(&self) -> &[f64] {
        &self.tau_grid
    }
    pub fn x_probe(&self) -> f64 {
        self.x_probe
    }

    /// q = p/(p − 1) < 0.
    pub fn q(&self) -> f64 {
        dual_exponent(self.utility.p())
    }

    /// λ = ½θ²q(q − 1) − rq.
    pub fn lambda_exponent(&self) -> f64 {
        let (q, theta) = (self.q(), self.market.effective_theta());
        0.5 * theta * theta * q * (q - 1.0) - self.market.r() * q
    }

    /// θx/(σ(1 − p)).
    pub fn merton_target(&self) -> f64 {
        self.market.effective_theta() * self.x_probe / (self.market.sigma() * (1.0 - self.utility.p()))
    }

    /// With-rate quadrature surface of the normalized utility.
    pub fn surface(&self) -> Result<DualValueSurface> {
        surface_for(&self.utility.normalized()?, &self.market)
    }
}

fn surface_for(u: &PowerTailUtility, market: &MarketModel) -> Result<DualValueSurface> {
    let dual = Utility::PowerTail(u.clone()).dual();
    DualValueSurface::new(*market, dual, Regime::WithRate, Backend::Quadrature, DEFAULT_QUADRATURE_ORDER)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnpikeRow {
    pub tau: f64,
    pub risky_amount: f64,
    /// |A/target − 1|.
    pub gap: f64,
    pub error: Option<String>,
}

/// A(τ, x) at each τ of the grid and its relative distance from the Merton amount.
/// Failures are reported per row (NaN amount and gap) rather than aborting.
pub fn turnpike_sweep(spec: &TurnpikeSpec) -> Result<Vec<TurnpikeRow>> {
    let primal = PrimalValueSurface::new(spec.surface()?);
    let target = spec.merton_target();
    Ok(spec
        .tau_grid
        .par_iter()
        .map(|&tau| match primal.risky_amount(tau, spec.x_probe) {
            Ok(a) => TurnpikeRow { tau, risky_amount: a, gap: (a / target - 1.0).abs(), error: None },
            Err(e) => TurnpikeRow { tau, risky_amount: f64::NAN, gap: f64::NAN, error: Some(e.to_string()) },
        })
        .collect())
}

/// True when the gaps over the last half of the rows are strictly decreasing.
pub fn gap_decreasing_on_last_half(rows: &[TurnpikeRow]) -> bool {
    let tail = &rows[rows.len() / 2..];
    tail.iter().all(|r| r.gap.is_finite()) && tail.windows(2).all(|w| w[1].gap < w[0].gap)
}

/// Relative difference between the risky amounts computed from U and from c·U + d.
pub fn affine_invariance_gap(spec: &TurnpikeSpec, tau: f64, c: f64, d: f64) -> Result<f64> {
    let base = PrimalValueSurface::new(surface_for(&spec.utility, &spec.market)?);
    let moved = PrimalValueSurface::new(surface_for(&spec.utility.affine(c, d)?, &spec.market)?);
    let a = base.risky_amount(tau, spec.x_probe)?;
    let b = moved.risky_amount(tau, spec.x_probe)?;
    Ok((a - b).abs() / a.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorollaryRow {
    pub y: f64,
    /// v / (e^{λτ}yᵠ).
    pub ratio_v: f64,
    /// v_y / (q·e^{λτ}y^{q−1}).
    pub ratio_v_y: f64,
    /// v_yy / (q(q − 1)·e^{λτ}y^{q−2}).
    pub ratio_v_yy: f64,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorollaryReport {
    pub tau: f64,
    pub q: f64,
    pub lambda_exponent: f64,
    pub rows: Vec<CorollaryRow>,
}

/// exp(ln|value| − ln|scale|) computed without forming the scale.
fn log_ratio(value: f64, log_scale: f64) -> f64 {
    if value == 0.0 {
        return 0.0;
    }
    (value.abs().ln() - log_scale).exp() * value.signum()
}

/// Small-y ratios of v and its derivatives against e^{λτ}yᵠ on an arbitrary surface.
pub fn corollary_limits_surface(
    surface: &DualValueSurface,
    q: f64,
    lambda_exponent: f64,
    tau: f64,
    probes: &[f64],
) -> Result<CorollaryReport> {
    if !(tau > 0.0) {
        return Err(domain("corollary limits need τ > 0"));
    }
    if !(q < 0.0) {
        return Err(invalid("dual exponent q must be negative"));
    }
    let rows = probes
        .iter()
        .map(|&y| -> Result<CorollaryRow> {
            let d = surface.derivatives_tau(tau, y)?;
            let base = lambda_exponent * tau + q * y.ln();
            // q < 0 and q(q − 1) > 0, so signs are carried by the probes themselves
            let ratio_v = log_ratio(d.v, base);
            let ratio_v_y = -log_ratio(d.v_y, base + (-q).ln() - y.ln());
            let ratio_v_yy = log_ratio(d.v_yy, base + (q * (q - 1.0)).ln() - 2.0 * y.ln());
            let max_deviation =
                [ratio_v, ratio_v_y, ratio_v_yy].iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
            Ok(CorollaryRow { y, ratio_v, ratio_v_y, ratio_v_yy, max_deviation })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorollaryReport { tau, q, lambda_exponent, rows })
}

/// Corollary ratios for the normalized utility of `spec` at y ∈ {1e−3, 1e−4, 1e−5}.
pub fn corollary_limits(spec: &TurnpikeSpec, tau: f64) -> Result<CorollaryReport> {
    corollary_limits_surface(&spec.surface()?, spec.q(), spec.lambda_exponent(), tau, &SMALL_Y_PROBES)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LargeYRow {
    pub y: f64,
    pub v: f64,
    pub y_v_y: f64,
    pub y2_v_yy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LargeYReport {
    pub tau: f64,
    pub rows: Vec<LargeYRow>,
    pub max_magnitude: f64,
}

/// The triple (v, y·v_y, y²·v_yy) at large y; requires Ũ(∞) = U(0) = 0.
pub fn large_y_limits_surface(surface: &DualValueSurface, tau: f64, probes: &[f64]) -> Result<LargeYReport> {
    if surface.dual().value_at_infinity() != 0.0 {
        return Err(invalid("large-y limits need a utility with U(0) = 0"));
    }
    let rows = probes
        .iter()
        .map(|&y| -> Result<LargeYRow> {
            let d = surface.derivatives_tau(tau, y)?;
            Ok(LargeYRow { y, v: d.v, y_v_y: y * d.v_y, y2_v_yy: y * y * d.v_yy })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_magnitude =
        rows.iter().flat_map(|r| [r.v.abs(), r.y_v_y.abs(), r.y2_v_yy.abs()]).fold(0.0, f64::max);
    Ok(LargeYReport { tau, rows, max_magnitude })
}

/// Large-y triple for the normalized utility of `spec` at y ∈ {1e3, 1e4}.
pub fn large_y_limits(spec: &TurnpikeSpec, tau: f64) -> Result<LargeYReport> {
    large_y_limits_surface(&spec.surface()?, tau, &LARGE_Y_PROBES)
}
