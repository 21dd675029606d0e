//! Monte Carlo simulation of optimal wealth paths.
//!
//! Every path draws from its own ChaCha8 stream keyed by `(seed, path index)`
//! and results are reduced in index order, so output does not depend on the
//! number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closedform::CappedSolution;
use crate::error::{invalid, Error, Result};
use crate::market::{MarketModel, Regime};
use crate::primal::PrimalValueSurface;
use crate::riskfrontier::{cvar_ru, DiscreteLossDistribution, RiskSpec};
use crate::utility::Utility;

pub const DEFAULT_HISTOGRAM_BINS: usize = 20;
pub const CONTROL_TABLE_POINTS: usize = 1024;
const CLAMP: f64 = 1e-8;
const EXPLOSION_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExactCapped,
    EulerFeedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_bins() -> usize {
    DEFAULT_HISTOGRAM_BINS
}

impl SimConfig {
    pub fn new(paths: usize, steps: usize, seed: u64, scheme: Scheme) -> Self {
        Self { paths, steps, seed, scheme, antithetic: false, histogram_bins: DEFAULT_HISTOGRAM_BINS }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 || self.steps == 0 {
            return Err(invalid("need at least one path and one step"));
        }
        if self.antithetic && !self.paths.is_multiple_of(2) {
            return Err(invalid("antithetic sampling needs an even number of paths"));
        }
        if self.histogram_bins == 0 {
            return Err(invalid("histogram needs at least one bin"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

/// Summary of U(X_T) over simulated paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStats {
    pub paths: usize,
    pub steps: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Paths whose wealth left the range [0, 10³·x_star].
    pub exploded: usize,
    pub histogram: Vec<HistogramBin>,
    #[serde(skip)]
    pub terminal_wealth: Vec<f64>,
    #[serde(skip)]
    pub utilities: Vec<f64>,
}

impl PathStats {
    fn from_samples(
        terminal_wealth: Vec<f64>,
        utility: &Utility,
        exploded: usize,
        cfg: &SimConfig,
        hist_top: f64,
    ) -> Result<Self> {
        let utilities = terminal_wealth.iter().map(|&x| utility.eval(x.max(0.0))).collect::<Result<Vec<_>>>()?;
        let (mean, stderr) = mean_stderr(&utilities, cfg.antithetic);
        let top = if hist_top.is_finite() && hist_top > 0.0 {
            hist_top
        } else {
            terminal_wealth.iter().copied().fold(0.0, f64::max)
        };
        let histogram = histogram(&terminal_wealth, top, cfg.histogram_bins);
        Ok(Self { paths: cfg.paths, steps: cfg.steps, mean, stderr, exploded, histogram, terminal_wealth, utilities })
    }
}

/// Σ xs by recursive halving; the split points depend only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn mean_stderr(samples: &[f64], antithetic: bool) -> (f64, f64) {
    let n = samples.len();
    let mean = pairwise_sum(samples) / n as f64;
    let units: Vec<f64> = if antithetic {
        samples.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
    } else {
        samples.to_vec()
    };
    let m = units.len();
    if m < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = units.iter().map(|u| (u - mean) * (u - mean)).collect();
    let var = pairwise_sum(&sq) / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

fn histogram(xs: &[f64], top: f64, bins: usize) -> Vec<HistogramBin> {
    let top = if top > 0.0 { top } else { 1.0 };
    let width = top / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in xs {
        let i = ((x.max(0.0) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = xs.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| HistogramBin {
            lower: i as f64 * width,
            upper: if i + 1 == bins { f64::INFINITY } else { (i + 1) as f64 * width },
            mass: c as f64 / n,
        })
        .collect()
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream and sign for path i; antithetic pairs share a stream.
fn stream_of(i: usize, antithetic: bool) -> (u64, f64) {
    if antithetic {
        ((i / 2) as u64, if i.is_multiple_of(2) { 1.0 } else { -1.0 })
    } else {
        (i as u64, 1.0)
    }
}

fn check_capped(h: f64, x: f64) -> Result<()> {
    if !(x > 0.0 && x < h) {
        return Err(invalid(format!("exact capped scheme needs 0 < x < H, got x = {x}, H = {h}")));
    }
    Ok(())
}

/// Exact terminal wealth of the optimal capped strategy: X_T = H·1{Z₀√T + θT + W_T > 0}.
pub fn simulate_exact_capped(m: &MarketModel, h: f64, x: f64, cfg: &SimConfig) -> Result<PathStats> {
    cfg.validate()?;
    check_capped(h, x)?;
    let z0 = CappedSolution::new(h, *m)?.z0(x)?;
    let (theta, t_end) = (m.effective_theta(), m.horizon());
    let drift = z0 * t_end.sqrt() + theta * t_end;
    let terminal: Vec<f64> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            let (stream, sign) = stream_of(i, cfg.antithetic);
            let mut rng = path_rng(cfg.seed, stream);
            let z: f64 = rng.sample(StandardNormal);
            if drift + sign * t_end.sqrt() * z > 0.0 {
                h
            } else {
                0.0
            }
        })
        .collect();
    let utility = Utility::Capped(crate::utility::CappedUtility::new(h)?);
    PathStats::from_samples(terminal, &utility, 0, cfg, h)
}

/// Risky amount held at step n (time t) with spot wealth x.
pub trait Policy: Sync {
    fn amount(&self, n: usize, t: f64, x: f64) -> f64;
}

impl<F: Fn(usize, f64, f64) -> f64 + Sync> Policy for F {
    fn amount(&self, n: usize, t: f64, x: f64) -> f64 {
        self(n, t, x)
    }
}

/// Holds a fixed proportion of wealth in the risky asset.
#[derive(Debug, Clone, Copy)]
pub struct ConstantProportion(pub f64);

impl Policy for ConstantProportion {
    fn amount(&self, _n: usize, _t: f64, x: f64) -> f64 {
        self.0 * x
    }
}

struct PathResult {
    terminal: f64,
    exploded: bool,
    marks: Vec<f64>,
}

/// Paths advanced together; stepping a block in time order keeps each
/// control-table row in cache while every path uses it.
const CHUNK: usize = 512;

/// Euler–Maruyama for dX = (a(μ − r) + rX)dt + aσ dW over `count` paths, with
/// `a` from the policy and `draw(j, n)` the standard normal for path j, step n.
/// Wealth at or below 0 is absorbed; wealth above `cap` stops the path.
#[allow(clippy::too_many_arguments)]
fn evolve_chunk(
    m: &MarketModel,
    x: f64,
    steps: usize,
    count: usize,
    mut draw: impl FnMut(usize, usize) -> f64,
    policy: &dyn Policy,
    cap: f64,
    marks_at: &[usize],
) -> Vec<PathResult> {
    let dt = m.horizon() / steps as f64;
    let sdt = dt.sqrt();
    let (r, excess, sigma) = (m.r(), m.excess_return(), m.sigma());
    let mut state = vec![x; count];
    let mut exploded = vec![false; count];
    let mut marks: Vec<Vec<f64>> = vec![Vec::with_capacity(marks_at.len()); count];
    let mut next_mark = 0;
    for n in 0..steps {
        while next_mark < marks_at.len() && marks_at[next_mark] == n {
            marks.iter_mut().zip(&state).for_each(|(mk, &s)| mk.push(s));
            next_mark += 1;
        }
        let t = n as f64 * dt;
        for j in 0..count {
            let z = draw(j, n);
            let s = state[j];
            if s <= 0.0 || exploded[j] {
                continue;
            }
            let a = policy.amount(n, t, s);
            let next = s + (a * excess + r * s) * dt + a * sigma * sdt * z;
            if next <= 0.0 {
                state[j] = 0.0;
            } else {
                state[j] = next;
                exploded[j] = next > cap;
            }
        }
    }
    while next_mark < marks_at.len() {
        marks.iter_mut().zip(&state).for_each(|(mk, &s)| mk.push(s));
        next_mark += 1;
    }
    state
        .into_iter()
        .zip(exploded)
        .zip(marks)
        .map(|((terminal, exploded), marks)| PathResult { terminal, exploded, marks })
        .collect()
}

fn run_policy(
    m: &MarketModel,
    x: f64,
    cfg: &SimConfig,
    policy: &dyn Policy,
    cap: f64,
    marks_at: &[usize],
) -> Vec<PathResult> {
    let chunks: Vec<Vec<PathResult>> = (0..cfg.paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(cfg.paths);
            let (mut rngs, signs): (Vec<ChaCha8Rng>, Vec<f64>) = range
                .clone()
                .map(|i| {
                    let (stream, sign) = stream_of(i, cfg.antithetic);
                    (path_rng(cfg.seed, stream), sign)
                })
                .unzip();
            let draw = |j: usize, _n: usize| -> f64 {
                let z: f64 = rngs[j].sample(StandardNormal);
                signs[j] * z
            };
            evolve_chunk(m, x, cfg.steps, range.len(), draw, policy, cap, marks_at)
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// Euler simulation under an arbitrary policy, scored with `utility`.
pub fn simulate_policy(
    m: &MarketModel,
    utility: &Utility,
    x: f64,
    cfg: &SimConfig,
    policy: &dyn Policy,
    explosion_level: f64,
) -> Result<PathStats> {
    cfg.validate()?;
    if !(x >= 0.0) {
        return Err(invalid("initial wealth must be non-negative"));
    }
    let results = run_policy(m, x, cfg, policy, explosion_level, &[]);
    let exploded = results.iter().filter(|p| p.exploded).count();
    let terminal = results.into_iter().map(|p| p.terminal).collect();
    PathStats::from_samples(terminal, utility, exploded, cfg, f64::NAN)
}

/// (lowest wealth, highest wealth, sorted (wealth, amount) nodes) for one step.
type TableRow = (f64, f64, Vec<(f64, f64)>);

/// Optimal risky amounts tabulated per time step on a wealth grid built from
/// a log-spaced dual grid, so paths never root-find.
pub struct ControlTable {
    dt: f64,
    growth: Vec<f64>,
    x_lo: Vec<f64>,
    x_hi: Vec<f64>,
    rows: Vec<Vec<(f64, f64)>>,
    x_star: f64,
}

impl ControlTable {
    pub fn build(primal: &PrimalValueSurface, steps: usize, x0: f64, points: usize) -> Result<Self> {
        let dual = primal.dual_surface();
        let m = dual.market();
        let dt = m.horizon() / steps as f64;
        let x_star = primal.x_star();
        let (x_lo, x_hi) = if x_star.is_finite() {
            (CLAMP * x_star, x_star * (1.0 - CLAMP))
        } else {
            (CLAMP * x0, 1e4 * x0)
        };
        let scale = m.effective_theta() / m.sigma();
        let rows = (0..steps)
            .into_par_iter()
            .map(|n| -> Result<TableRow> {
                let tau = m.horizon() - n as f64 * dt;
                let y_top = primal.y_of_x_tau(tau, x_lo)?;
                let y_bottom = primal.y_of_x_tau(tau, x_hi)?;
                let (l0, l1) = (y_bottom.ln(), y_top.ln());
                let mut row = Vec::with_capacity(points);
                for j in 0..points {
                    let y = (l0 + (l1 - l0) * j as f64 / (points - 1) as f64).exp();
                    let d = dual.derivatives_tau(tau, y)?;
                    row.push((-d.v_y, scale * y * d.v_yy));
                }
                row.sort_by(|a, b| a.0.total_cmp(&b.0));
                row.dedup_by(|a, b| a.0 == b.0);
                let lo = row.first().map_or(x_lo, |r| r.0.max(x_lo));
                let hi = row.last().map_or(x_hi, |r| r.0.min(x_hi));
                Ok((lo, hi, row))
            })
            .collect::<Result<Vec<_>>>()?;
        let growth = (0..steps)
            .map(|n| match dual.regime() {
                Regime::Discounted => (m.r() * (m.horizon() - n as f64 * dt)).exp(),
                Regime::WithRate => 1.0,
            })
            .collect();
        let mut lo = Vec::with_capacity(steps);
        let mut hi = Vec::with_capacity(steps);
        let mut table = Vec::with_capacity(steps);
        for (l, h, r) in rows {
            lo.push(l);
            hi.push(h);
            table.push(r);
        }
        Ok(Self { dt, growth, x_lo: lo, x_hi: hi, rows: table, x_star })
    }

    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    pub fn time_step(&self) -> f64 {
        self.dt
    }

    /// Risky amount at step n for surface-unit wealth, by linear interpolation.
    pub fn amount_at(&self, n: usize, wealth: f64) -> f64 {
        if wealth >= self.x_star {
            return 0.0;
        }
        let row = &self.rows[n];
        let w = wealth.clamp(self.x_lo[n], self.x_hi[n]);
        let j = row.partition_point(|p| p.0 <= w);
        if j == 0 {
            return row[0].1;
        }
        if j == row.len() {
            return row[row.len() - 1].1;
        }
        let (a, b) = (row[j - 1], row[j]);
        a.1 + (b.1 - a.1) * (w - a.0) / (b.0 - a.0)
    }
}

impl Policy for ControlTable {
    fn amount(&self, n: usize, _t: f64, x: f64) -> f64 {
        let g = self.growth[n];
        self.amount_at(n, x * g) / g
    }
}

fn explosion_level(primal: &PrimalValueSurface, x0: f64) -> f64 {
    if primal.x_star().is_finite() {
        EXPLOSION_FACTOR * primal.x_star()
    } else {
        EXPLOSION_FACTOR * 1e4 * x0
    }
}

/// Euler scheme under the optimal feedback control of `primal`.
pub fn simulate_euler(m: &MarketModel, primal: &PrimalValueSurface, x: f64, cfg: &SimConfig) -> Result<PathStats> {
    cfg.validate()?;
    if !(x > 0.0) {
        return Err(invalid("initial wealth must be positive"));
    }
    let utility = primal.utility().clone();
    let top = primal.x_star();
    if primal.forward_wealth(0.0, x)? >= primal.x_star() {
        let zero = |_: usize, _: f64, _: f64| 0.0;
        let results = run_policy(m, x, cfg, &zero, f64::INFINITY, &[]);
        let terminal = results.into_iter().map(|p| p.terminal).collect();
        return PathStats::from_samples(terminal, &utility, 0, cfg, top);
    }
    let table = ControlTable::build(primal, cfg.steps, primal.forward_wealth(0.0, x)?, CONTROL_TABLE_POINTS)?;
    let results = run_policy(m, x, cfg, &table, explosion_level(primal, x), &[]);
    let exploded = results.iter().filter(|p| p.exploded).count();
    let terminal = results.into_iter().map(|p| p.terminal).collect();
    PathStats::from_samples(terminal, &utility, exploded, cfg, top)
}

/// (VaR, CVaR) of the empirical loss c − U(X_T).
pub fn empirical_var_cvar(stats: &PathStats, risk: &RiskSpec) -> Result<(f64, f64)> {
    let losses: Vec<f64> = stats.utilities.iter().map(|u| risk.benchmark() - u).collect();
    cvar_ru(&DiscreteLossDistribution::from_samples(&losses)?, risk.beta())
}

pub fn empirical_cvar(stats: &PathStats, risk: &RiskSpec) -> Result<f64> {
    Ok(empirical_var_cvar(stats, risk)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckpointStat {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    /// |mean − u(0, x)| / stderr.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub initial_value: f64,
    pub checkpoints: Vec<CheckpointStat>,
    pub max_deviation: f64,
}

/// Estimates E[u(tᵢ, X_{tᵢ})] along optimal paths and compares with u(0, x).
pub fn martingale_diagnostic(
    m: &MarketModel,
    primal: &PrimalValueSurface,
    x: f64,
    cfg: &SimConfig,
    checkpoints: &[f64],
) -> Result<MartingaleReport> {
    cfg.validate()?;
    if primal.dual_surface().regime() != Regime::Discounted {
        return Err(invalid("the martingale diagnostic needs the discounted regime"));
    }
    let t_end = m.horizon();
    if checkpoints.iter().any(|&t| !(t > 0.0 && t < t_end)) {
        return Err(invalid("checkpoints must lie strictly inside (0, T)"));
    }
    let mut times = checkpoints.to_vec();
    times.sort_by(f64::total_cmp);
    let initial_value = primal.u(0.0, primal.forward_wealth(0.0, x)?)?;

    // per-path wealth at each checkpoint
    let (times, marks): (Vec<f64>, Vec<Vec<f64>>) = match cfg.scheme {
        Scheme::ExactCapped => {
            let h = primal.x_star();
            check_capped(h, x)?;
            let z0 = CappedSolution::new(h, *m)?.z0(x)?;
            let theta = m.effective_theta();
            let marks = (0..cfg.paths)
                .into_par_iter()
                .map(|i| {
                    let (stream, sign) = stream_of(i, cfg.antithetic);
                    let mut rng = path_rng(cfg.seed, stream);
                    let (mut w, mut prev) = (0.0, 0.0);
                    times
                        .iter()
                        .map(|&t| {
                            let z: f64 = rng.sample(StandardNormal);
                            w += sign * (t - prev).sqrt() * z;
                            prev = t;
                            let zt = (z0 * t_end.sqrt() + theta * t + w) / (t_end - t).sqrt();
                            h * crate::normal::cdf(zt)
                        })
                        .collect()
                })
                .collect();
            (times, marks)
        }
        Scheme::EulerFeedback => {
            let dt = t_end / cfg.steps as f64;
            let idx: Vec<usize> = times.iter().map(|t| (t / dt).round() as usize).collect();
            if idx.iter().any(|&n| n == 0 || n >= cfg.steps) {
                return Err(invalid("checkpoints fall outside the time grid"));
            }
            let table = ControlTable::build(primal, cfg.steps, primal.forward_wealth(0.0, x)?, CONTROL_TABLE_POINTS)?;
            let results = run_policy(m, x, cfg, &table, explosion_level(primal, x), &idx);
            let snapped = idx.iter().map(|&n| n as f64 * dt).collect();
            (snapped, results.into_iter().map(|p| p.marks).collect())
        }
    };

    let mut stats = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let values = marks
            .par_iter()
            .map(|row| primal.u(t, primal.forward_wealth(t, row[k])?))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, stderr) = mean_stderr(&values, cfg.antithetic);
        let deviation = if stderr > 0.0 {
            (mean - initial_value).abs() / stderr
        } else if mean == initial_value {
            0.0
        } else {
            f64::INFINITY
        };
        stats.push(CheckpointStat { t, mean, stderr, deviation });
    }
    let max_deviation = stats.iter().map(|s| s.deviation).fold(0.0, f64::max);
    Ok(MartingaleReport { initial_value, checkpoints: stats, max_deviation })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub mean: f64,
    pub stderr: f64,
    /// mean − target.
    pub bias: f64,
    /// Standard error of the bias estimate relative to the finest level.
    pub bias_vs_finest_stderr: f64,
}

/// Euler means for several step counts on common Brownian paths. Every step
/// count must divide the largest one; coarse increments sum fine ones.
pub fn convergence_study(
    m: &MarketModel,
    primal: &PrimalValueSurface,
    x: f64,
    paths: usize,
    seed: u64,
    step_counts: &[usize],
    target: f64,
) -> Result<Vec<ConvergenceRow>> {
    let finest = *step_counts.iter().max().ok_or_else(|| invalid("no step counts"))?;
    if paths < 2 || step_counts.iter().any(|&s| s == 0 || finest % s != 0) {
        return Err(invalid("step counts must be positive divisors of the largest"));
    }
    let x_fwd = primal.forward_wealth(0.0, x)?;
    let tables = step_counts
        .iter()
        .map(|&s| ControlTable::build(primal, s, x_fwd, CONTROL_TABLE_POINTS))
        .collect::<Result<Vec<_>>>()?;
    let cap = explosion_level(primal, x);
    let utility = primal.utility();
    let chunks = (0..paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| -> Result<Vec<Vec<f64>>> {
            let range = c * CHUNK..((c + 1) * CHUNK).min(paths);
            let count = range.len();
            let fine: Vec<f64> = range
                .flat_map(|i| {
                    let mut rng = path_rng(seed, i as u64);
                    (0..finest).map(move |_| rng.sample::<f64, _>(StandardNormal))
                })
                .collect();
            let mut out = vec![Vec::with_capacity(step_counts.len()); count];
            for (&s, table) in step_counts.iter().zip(&tables) {
                let agg = finest / s;
                let scale = 1.0 / (agg as f64).sqrt();
                let coarse: Vec<f64> = fine.chunks(agg).map(|g| g.iter().sum::<f64>() * scale).collect();
                let draw = |j: usize, n: usize| coarse[j * s + n];
                let results = evolve_chunk(m, x, s, count, draw, table, cap, &[]);
                for (row, p) in out.iter_mut().zip(results) {
                    row.push(utility.eval(p.terminal.max(0.0))?);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let per_path: Vec<Vec<f64>> = chunks.into_iter().flatten().collect();
    let k_fine = step_counts.iter().position(|&s| s == finest).expect("present");
    let mut rows = Vec::with_capacity(step_counts.len());
    for (k, &s) in step_counts.iter().enumerate() {
        let col: Vec<f64> = per_path.iter().map(|r| r[k]).collect();
        let diff: Vec<f64> = per_path.iter().map(|r| r[k] - r[k_fine]).collect();
        let (mean, stderr) = mean_stderr(&col, false);
        let (_, diff_se) = mean_stderr(&diff, false);
        rows.push(ConvergenceRow { steps: s, mean, stderr, bias: mean - target, bias_vs_finest_stderr: diff_se });
    }
    Ok(rows)
}

/// Rejects scheme/utility combinations the simulators cannot handle.
pub fn ensure_exact_capped(primal: &PrimalValueSurface) -> Result<f64> {
    match primal.utility() {
        Utility::Capped(u) => Ok(u.cap()),
        Utility::Piecewise(u) if u.len() == 1 && u.slopes()[0] == 1.0 && u.value_at_zero() == 0.0 => {
            Ok(u.breakpoints()[0])
        }
        _ => Err(Error::InvalidParameter("the exact scheme is only available for U = x ∧ H".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualvalue::DualValueSurface;
    use crate::market::Constraint;
    use crate::utility::CappedUtility;

    fn market() -> MarketModel {
        MarketModel::new(0.0, 0.04, 0.2, 1.0, Constraint::Unconstrained).unwrap()
    }

    fn capped_primal() -> PrimalValueSurface {
        let dual = Utility::Capped(CappedUtility::new(1.0).unwrap()).dual();
        PrimalValueSurface::new(DualValueSurface::with_default_backend(market(), dual, Regime::Discounted).unwrap())
    }

    #[test]
    fn pairwise_sum_is_exact_on_small_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn exact_scheme_is_deterministic_and_unbiased() {
        let cfg = SimConfig::new(20_000, 1, 7, Scheme::ExactCapped);
        let a = simulate_exact_capped(&market(), 1.0, 0.5, &cfg).unwrap();
        let b = simulate_exact_capped(&market(), 1.0, 0.5, &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.mean - 0.579_259_709_439_103).abs() < 3.0 * a.stderr);
        let mass: f64 = a.histogram.iter().map(|b| b.mass).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn antithetic_needs_even_paths() {
        let mut cfg = SimConfig::new(11, 1, 7, Scheme::ExactCapped);
        cfg.antithetic = true;
        assert!(simulate_exact_capped(&market(), 1.0, 0.5, &cfg).is_err());
        cfg.paths = 10_000;
        let s = simulate_exact_capped(&market(), 1.0, 0.5, &cfg).unwrap();
        assert!((s.mean - 0.579_259_709_439_103).abs() < 4.0 * s.stderr);
    }

    #[test]
    fn control_table_matches_feedback_control() {
        let p = capped_primal();
        let table = ControlTable::build(&p, 10, 0.5, CONTROL_TABLE_POINTS).unwrap();
        for x in [0.1, 0.3, 0.5, 0.8, 0.95] {
            let want = x * p.feedback_control(0.0, x).unwrap();
            let got = table.amount_at(0, x);
            assert!((got - want).abs() < 1e-4 * want, "x={x} got={got} want={want}");
        }
        assert_eq!(table.amount_at(3, 1.2), 0.0);
    }

    #[test]
    fn euler_above_threshold_keeps_wealth() {
        let cfg = SimConfig::new(100, 50, 1, Scheme::EulerFeedback);
        let s = simulate_euler(&market(), &capped_primal(), 1.5, &cfg).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!(s.terminal_wealth.iter().all(|&x| x == 1.5));
    }

    #[test]
    fn zero_control_is_driftless() {
        let cfg = SimConfig::new(1000, 10, 3, Scheme::EulerFeedback);
        let u = Utility::Capped(CappedUtility::new(1.0).unwrap());
        let s = simulate_policy(&market(), &u, 0.2, &cfg, &ConstantProportion(0.0), f64::INFINITY).unwrap();
        assert!((s.mean - 0.2).abs() < 1e-14);
        assert!(s.stderr < 1e-15);
    }

    #[test]
    fn degenerate_losses_give_that_loss() {
        let cfg = SimConfig::new(50, 10, 3, Scheme::EulerFeedback);
        let u = Utility::Capped(CappedUtility::new(1.0).unwrap());
        let s = simulate_policy(&market(), &u, 0.2, &cfg, &ConstantProportion(0.0), f64::INFINITY).unwrap();
        let risk = RiskSpec::new(0.9, 0.5).unwrap();
        assert!((empirical_cvar(&s, &risk).unwrap() - 0.3).abs() < 1e-15);
    }
}
