//! CVaR through the Rockafellar–Uryasev minimization and the wealth–CVaR
//! frontier for the capped utility.
//!
//! For a benchmark c and loss Z = c − U(X_T), the scalarized problem
//! `max E[U(X_T)] − λ·CVaR_β(Z)` splits into an inner utility problem for a
//! fixed VaR level y and a one-dimensional outer search over y ∈ [c − H, c].

use rayon::prelude::*;
use serde::Serialize;

use crate::dualvalue::DualValueSurface;
use crate::error::{domain, invalid, Error, Result};
use crate::market::{MarketModel, Regime};
use crate::normal::cdf_diff;
use crate::primal::PrimalValueSurface;
use crate::utility::{PiecewiseLinearUtility, Utility};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskSpec {
    beta: f64,
    delta: f64,
    benchmark: f64,
}

impl RiskSpec {
    pub fn new(beta: f64, benchmark: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(invalid(format!("confidence beta = {beta} must lie in (0, 1)")));
        }
        if !benchmark.is_finite() {
            return Err(invalid("benchmark wealth must be finite"));
        }
        Ok(Self { beta, delta: 1.0 / (1.0 - beta), benchmark })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// δ = 1/(1 − β).
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Certain wealth c against which losses are measured.
    pub fn benchmark(&self) -> f64 {
        self.benchmark
    }
}

/// Finite loss distribution, atoms sorted by loss with equal losses merged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteLossDistribution {
    atoms: Vec<(f64, f64)>,
}

const PROB_TOL: f64 = 1e-12;

impl DiscreteLossDistribution {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(domain("loss distribution has no atoms"));
        }
        let mut total = 0.0;
        for &(z, p) in &atoms {
            if !z.is_finite() || !(p >= 0.0) {
                return Err(invalid(format!("bad atom ({z}, {p})")));
            }
            total += p;
        }
        if (total - 1.0).abs() > PROB_TOL {
            return Err(invalid(format!("atom probabilities sum to {total}, not 1")));
        }
        let mut atoms = atoms;
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (z, p) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == z => last.1 += p,
                _ => merged.push((z, p)),
            }
        }
        Ok(Self { atoms: merged })
    }

    /// Empirical distribution with mass 1/n on each sample.
    pub fn from_samples(losses: &[f64]) -> Result<Self> {
        if losses.is_empty() {
            return Err(domain("no loss samples"));
        }
        let mut sorted = losses.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j < n && sorted[j] == sorted[i] {
                j += 1;
            }
            atoms.push((sorted[i], (j - i) as f64 / n as f64));
            i = j;
        }
        Self::new(atoms)
    }

    /// Losses Z = c − U(X_T) for terminal wealth atoms (x_i, p_i).
    pub fn from_wealth_atoms(wealth: &[(f64, f64)], benchmark: f64, utility: &Utility) -> Result<Self> {
        let atoms = wealth
            .iter()
            .map(|&(x, p)| Ok((benchmark - utility.eval(x)?, p)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(z, p)| z * p).sum()
    }
}

/// (VaR, CVaR) with CVaR = min_y y + δ·E(Z − y)⁺ and VaR the left end of the argmin set.
pub fn cvar_ru(d: &DiscreteLossDistribution, beta: f64) -> Result<(f64, f64)> {
    if d.atoms.is_empty() {
        return Err(domain("loss distribution has no atoms"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid(format!("confidence beta = {beta} must lie in (0, 1)")));
    }
    let delta = 1.0 / (1.0 - beta);
    let m = d.atoms.len();
    // suffix sums give E(Z − z_j)⁺ = Σ_{i>j} p_i z_i − z_j Σ_{i>j} p_i
    let mut tail_mass = vec![0.0; m];
    let mut tail_moment = vec![0.0; m];
    for j in (0..m - 1).rev() {
        let (z, p) = d.atoms[j + 1];
        tail_mass[j] = tail_mass[j + 1] + p;
        tail_moment[j] = tail_moment[j + 1] + p * z;
    }
    let objective: Vec<f64> = d
        .atoms
        .iter()
        .enumerate()
        .map(|(j, &(z, _))| z + delta * (tail_moment[j] - z * tail_mass[j]).max(0.0))
        .collect();
    let best = objective.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-13 * (1.0 + best.abs());
    let j = objective.iter().position(|&f| f <= best + tol).expect("non-empty");
    Ok((d.atoms[j].0, objective[j]))
}

/// CVaR of the optimal capped strategy from its terminal probabilities (P(X_T = H), P(X_T = 0)).
pub fn cvar_cap_closed(x: f64, h: f64, probs: (f64, f64), beta: f64) -> f64 {
    let (p_h, p_0) = probs;
    if beta >= p_h {
        x
    } else {
        x - h * (1.0 - p_0 / (1.0 - beta))
    }
}

/// Inner utility `U(x) − λδ(c − y − U(x))⁺` for U = x ∧ H, split into a
/// piecewise-linear part and an additive constant.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerUtility {
    pub utility: PiecewiseLinearUtility,
    pub offset: f64,
}

impl InnerUtility {
    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.utility.eval(x)? + self.offset)
    }
}

pub fn inner_utility(y: f64, lambda: f64, risk: &RiskSpec, h: f64) -> Result<InnerUtility> {
    if !(h.is_finite() && h > 0.0) {
        return Err(domain(format!("cap H = {h} must be positive")));
    }
    if !(lambda >= 0.0) || !y.is_finite() {
        return Err(invalid("need λ ≥ 0 and finite y"));
    }
    let k = lambda * risk.delta;
    let gap = risk.benchmark - y;
    let plain = || InnerUtility { utility: PiecewiseLinearUtility::new(vec![h], vec![1.0], h).expect("valid"), offset: 0.0 };
    if k == 0.0 || gap <= 0.0 {
        return Ok(plain());
    }
    if gap >= h {
        let utility = PiecewiseLinearUtility::new(vec![h], vec![1.0 + k], (1.0 + k) * h)?;
        return Ok(InnerUtility { utility, offset: -k * gap });
    }
    let utility = PiecewiseLinearUtility::new(vec![gap, h], vec![1.0 + k, 1.0], h)?;
    Ok(InnerUtility { utility, offset: 0.0 })
}

/// Inner optimum u^y(x) with the dual point and the sign checks of g(y′) = v_y(t, y′) + x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerValue {
    pub value: f64,
    pub dual_point: f64,
    pub g_small: f64,
    pub g_large: f64,
}

const BRACKET_SMALL: f64 = 1e-10;
const BRACKET_LARGE: f64 = 1e10;

fn inner_surface(inner: &InnerUtility, market: &MarketModel) -> Result<PrimalValueSurface> {
    let dual = Utility::Piecewise(inner.utility.clone()).dual();
    Ok(PrimalValueSurface::new(DualValueSurface::with_default_backend(*market, dual, Regime::Discounted)?))
}

pub fn inner_value(y: f64, lambda: f64, risk: &RiskSpec, h: f64, market: &MarketModel, t: f64, x: f64) -> Result<InnerValue> {
    if !(x > 0.0 && x < h) {
        return Err(domain(format!("wealth x = {x} must lie in (0, {h})")));
    }
    let inner = inner_utility(y, lambda, risk, h)?;
    let surface = inner_surface(&inner, market)?;
    let dual = surface.dual_surface();
    let g_small = dual.v_y(t, BRACKET_SMALL)? + x;
    let g_large = dual.v_y(t, BRACKET_LARGE)? + x;
    if !(g_small < 0.0 && g_large > 0.0) {
        return Err(Error::Numeric(format!("inner root not bracketed: g(0+) = {g_small}, g(∞) = {g_large}")));
    }
    let dual_point = surface.y_of_x(t, x)?;
    let value = dual.v(t, dual_point)? + x * dual_point + inner.offset;
    Ok(InnerValue { value, dual_point, g_small, g_large })
}

/// Terminal wealth atoms (x_i, P(X_T = x_i)) of the optimal strategy for a
/// piecewise-linear utility, started at dual point y0 at time t.
pub fn terminal_distribution(u: &PiecewiseLinearUtility, market: &MarketModel, t: f64, y0: f64) -> Result<Vec<(f64, f64)>> {
    if !(y0 > 0.0) {
        return Err(domain("dual point must be positive"));
    }
    let a = market.alpha(t)?;
    let mean = y0.ln() - 0.5 * a * a;
    let mut atoms = Vec::with_capacity(u.len() + 1);
    for i in 0..=u.len() {
        let (lo, hi) = (u.slope(i + 1), u.slope(i));
        let p = if a == 0.0 {
            if y0 >= lo && y0 < hi {
                1.0
            } else {
                0.0
            }
        } else {
            cdf_diff((hi.ln() - mean) / a, (lo.ln() - mean) / a)
        };
        atoms.push((u.breakpoint(i), p));
    }
    Ok(atoms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    pub y_star: f64,
    pub var: f64,
    pub cvar: f64,
    pub expected_utility: f64,
    pub objective: f64,
    /// The outer objective was flat; `y_star` is the left endpoint.
    pub flat: bool,
    /// Smallest g(0+) and largest g(∞) seen over the outer search; the
    /// bracket held everywhere iff `g_small_max < 0 < g_large_min`.
    pub g_small_max: f64,
    pub g_large_min: f64,
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Maximizes u^y(x) − λy over [c − H, c] by golden-section search and
/// evaluates the resulting strategy's VaR, CVaR and E[U(X_T)].
pub fn outer_maximize(lambda: f64, risk: &RiskSpec, h: f64, market: &MarketModel, t: f64, x: f64) -> Result<FrontierPoint> {
    let (mut a, mut b) = (risk.benchmark - h, risk.benchmark);
    let tol = 1e-8 * h;
    let mut g_small_max = f64::NEG_INFINITY;
    let mut g_large_min = f64::INFINITY;
    let mut evals: Vec<(f64, f64)> = Vec::new();
    let mut objective = |y: f64| -> Result<f64> {
        let iv = inner_value(y, lambda, risk, h, market, t, x)?;
        g_small_max = g_small_max.max(iv.g_small);
        g_large_min = g_large_min.min(iv.g_large);
        let f = iv.value - lambda * y;
        evals.push((y, f));
        Ok(f)
    };
    objective(a)?;
    objective(b)?;
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = objective(d)?;
        }
    }
    let (lo, hi) = evals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &(_, f)| (l.min(f), u.max(f)));
    let flat = hi - lo <= 1e-12 * (1.0 + hi.abs());
    let y_star = if flat {
        risk.benchmark - h
    } else {
        // best evaluated point, ties toward smaller y
        let mut best = evals[0];
        for &(y, f) in &evals[1..] {
            if f > best.1 || (f == best.1 && y < best.0) {
                best = (y, f);
            }
        }
        best.0
    };

    let inner = inner_utility(y_star, lambda, risk, h)?;
    let surface = inner_surface(&inner, market)?;
    let y0 = surface.y_of_x(t, x)?;
    let wealth = terminal_distribution(&inner.utility, market, t, y0)?;
    let base = Utility::Piecewise(PiecewiseLinearUtility::new(vec![h], vec![1.0], h)?);
    let mut expected_utility = 0.0;
    for &(w, p) in &wealth {
        expected_utility += p * base.eval(w)?;
    }
    let losses = DiscreteLossDistribution::from_wealth_atoms(&wealth, risk.benchmark, &base)?;
    let (var, cvar) = cvar_ru(&losses, risk.beta)?;
    Ok(FrontierPoint {
        lambda,
        y_star,
        var,
        cvar,
        expected_utility,
        objective: expected_utility - lambda * cvar,
        flat,
        g_small_max,
        g_large_min,
    })
}

/// One frontier point per λ, computed in parallel and returned in grid order.
pub fn frontier_sweep(lambdas: &[f64], risk: &RiskSpec, h: f64, market: &MarketModel, t: f64, x: f64) -> Result<Vec<FrontierPoint>> {
    if lambdas.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(invalid("λ grid must be sorted ascending"));
    }
    lambdas.par_iter().map(|&l| outer_maximize(l, risk, h, market, t, x)).collect()
}
