//! Utility functions and their exact convex conjugates.
//!
//! Every utility here is continuous, increasing and concave on [0, ∞) with a
//! finite value at zero. The conjugate is Ũ(y) = sup_{x ≥ 0} (U(x) − xy),
//! which is decreasing and convex on (0, ∞).

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

/// Default limit on the number of breakpoints of a piecewise-linear utility.
pub const DEFAULT_MAX_BREAKPOINTS: usize = 64;

const CONTINUITY_TOL: f64 = 1e-9;

fn check_wealth(x: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(domain(format!("wealth x = {x} must be non-negative")));
    }
    Ok(())
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("exponent p = {p} must lie in (0, 1)")));
    }
    Ok(())
}

/// Dual exponent q = p/(p − 1) < 0.
pub fn dual_exponent(p: f64) -> f64 {
    p / (p - 1.0)
}

/// Tail constant a = 1/(pᵖ(1 − p)^{1−p}) for which U(x) ~ a·xᵖ has Ũ(y) ~ y^q.
pub fn tail_constant_for_normalized(p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(1.0 / (p.powf(p) * (1.0 - p).powf(1.0 - p)))
}

/// Increasing concave piecewise-linear utility
/// `U(x) = c_{i+1}·x + d_{i+1}` on `[x_i, x_{i+1})`, with `x_0 = 0`,
/// `x_{N+1} = ∞` and `c_{N+1} = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PiecewiseSpec", into = "PiecewiseSpec")]
pub struct PiecewiseLinearUtility {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
}

impl PiecewiseLinearUtility {
    /// Builds the utility from breakpoints `x_1 < … < x_N`, slopes
    /// `c_1 > … > c_N > 0` and the terminal level `d_{N+1} = U(∞)`. The other
    /// intercepts follow from continuity.
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, terminal_level: f64) -> Result<Self> {
        Self::with_limit(breakpoints, slopes, terminal_level, DEFAULT_MAX_BREAKPOINTS)
    }

    pub fn with_limit(
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
        terminal_level: f64,
        max_breakpoints: usize,
    ) -> Result<Self> {
        let n = breakpoints.len();
        if n == 0 {
            return Err(invalid("piecewise utility needs at least one breakpoint"));
        }
        if n > max_breakpoints {
            return Err(invalid(format!("{n} breakpoints exceed the limit {max_breakpoints}")));
        }
        if slopes.len() != n {
            return Err(invalid(format!("expected {n} slopes, got {}", slopes.len())));
        }
        if !terminal_level.is_finite() {
            return Err(invalid("terminal level must be finite"));
        }
        let mut prev = 0.0;
        for &b in &breakpoints {
            if !(b.is_finite() && b > prev) {
                return Err(invalid("breakpoints must be finite, positive and strictly increasing"));
            }
            prev = b;
        }
        let mut prev = f64::INFINITY;
        for &c in &slopes {
            if !(c.is_finite() && c > 0.0 && c < prev) {
                return Err(invalid("slopes must be finite, positive and strictly decreasing"));
            }
            prev = c;
        }
        // d_i = (c_{i+1} − c_i)·x_i + d_{i+1}, walking down from d_{N+1}
        let mut intercepts = vec![0.0; n + 1];
        intercepts[n] = terminal_level;
        for i in (0..n).rev() {
            let c_next = if i + 1 < n { slopes[i + 1] } else { 0.0 };
            intercepts[i] = (c_next - slopes[i]) * breakpoints[i] + intercepts[i + 1];
        }
        Ok(Self { breakpoints, slopes, intercepts })
    }

    /// Builds from explicit intercepts `d_1 … d_{N+1}`, checking continuity at every breakpoint.
    pub fn from_parts(breakpoints: Vec<f64>, slopes: Vec<f64>, intercepts: Vec<f64>) -> Result<Self> {
        if intercepts.len() != breakpoints.len() + 1 {
            return Err(invalid("need N + 1 intercepts"));
        }
        let terminal = *intercepts.last().expect("non-empty");
        let built = Self::new(breakpoints, slopes, terminal)?;
        for (i, (a, b)) in built.intercepts.iter().zip(&intercepts).enumerate() {
            if (a - b).abs() > CONTINUITY_TOL * (1.0 + a.abs()) {
                return Err(invalid(format!("utility is discontinuous at breakpoint {}", i + 1)));
            }
        }
        Ok(Self { intercepts, ..built })
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    /// `x_1 … x_N`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// `c_1 … c_N`; `c_{N+1} = 0` is implicit.
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// `d_1 … d_{N+1}`.
    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    /// `c_i` for i in 0..=N+1 with `c_0 = ∞`, `c_{N+1} = 0`.
    pub fn slope(&self, i: usize) -> f64 {
        match i {
            0 => f64::INFINITY,
            i if i <= self.len() => self.slopes[i - 1],
            _ => 0.0,
        }
    }

    /// `x_i` for i in 0..=N+1 with `x_0 = 0`, `x_{N+1} = ∞`.
    pub fn breakpoint(&self, i: usize) -> f64 {
        match i {
            0 => 0.0,
            i if i <= self.len() => self.breakpoints[i - 1],
            _ => f64::INFINITY,
        }
    }

    pub fn value_at_zero(&self) -> f64 {
        self.intercepts[0]
    }

    pub fn upper_level(&self) -> f64 {
        self.intercepts[self.len()]
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        check_wealth(x)?;
        let i = self.breakpoints.partition_point(|&b| b <= x);
        Ok(self.slope(i + 1) * x + self.intercepts[i])
    }

    /// Exact conjugate, one linear segment per slope interval.
    pub fn dual(&self) -> PiecewiseDual {
        let n = self.len();
        let segments = (0..=n)
            .map(|i| {
                let x_i = self.breakpoint(i);
                let c_next = self.slope(i + 1);
                DualSegment {
                    lower: c_next,
                    upper: self.slope(i),
                    slope: -x_i,
                    intercept: c_next * x_i + self.intercepts[i],
                }
            })
            .collect();
        PiecewiseDual { primal: self.clone(), segments }
    }
}

/// Serialized form: either the terminal level or the full intercept list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PiecewiseSpec {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminal_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intercepts: Option<Vec<f64>>,
}

impl TryFrom<PiecewiseSpec> for PiecewiseLinearUtility {
    type Error = crate::Error;
    fn try_from(s: PiecewiseSpec) -> Result<Self> {
        match (s.terminal_level, s.intercepts) {
            (Some(level), None) => Self::new(s.breakpoints, s.slopes, level),
            (None, Some(d)) => Self::from_parts(s.breakpoints, s.slopes, d),
            _ => Err(invalid("give exactly one of terminal_level or intercepts")),
        }
    }
}

impl From<PiecewiseLinearUtility> for PiecewiseSpec {
    fn from(u: PiecewiseLinearUtility) -> Self {
        let terminal_level = Some(u.upper_level());
        Self { breakpoints: u.breakpoints, slopes: u.slopes, terminal_level, intercepts: None }
    }
}

/// One linear piece `slope·y + intercept` of a piecewise-linear conjugate on `[lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSegment {
    pub lower: f64,
    pub upper: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Conjugate of a [`PiecewiseLinearUtility`].
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDual {
    primal: PiecewiseLinearUtility,
    segments: Vec<DualSegment>,
}

impl PiecewiseDual {
    pub fn primal(&self) -> &PiecewiseLinearUtility {
        &self.primal
    }

    /// Segments ordered by decreasing y (segment i lives on `[c_{i+1}, c_i)`).
    pub fn segments(&self) -> &[DualSegment] {
        &self.segments
    }

    fn segment_at(&self, y: f64) -> &DualSegment {
        // the last segment starts at 0, so some segment always matches y ≥ 0
        self.segments
            .iter()
            .find(|s| y >= s.lower)
            .unwrap_or_else(|| self.segments.last().expect("non-empty"))
    }

    pub fn value(&self, y: f64) -> f64 {
        let s = self.segment_at(y);
        s.slope * y + s.intercept
    }

    pub fn slope(&self, y: f64) -> f64 {
        self.segment_at(y).slope
    }
}

/// `U(x) = x ∧ H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CappedSpec", into = "CappedSpec")]
pub struct CappedUtility {
    cap: f64,
}

impl CappedUtility {
    pub fn new(cap: f64) -> Result<Self> {
        if !(cap.is_finite() && cap > 0.0) {
            return Err(invalid(format!("cap H = {cap} must be positive")));
        }
        Ok(Self { cap })
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        check_wealth(x)?;
        Ok(x.min(self.cap))
    }

    pub fn to_piecewise(&self) -> PiecewiseLinearUtility {
        PiecewiseLinearUtility::new(vec![self.cap], vec![1.0], self.cap).expect("cap is valid")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CappedSpec {
    cap: f64,
}

impl TryFrom<CappedSpec> for CappedUtility {
    type Error = crate::Error;
    fn try_from(s: CappedSpec) -> Result<Self> {
        Self::new(s.cap)
    }
}

impl From<CappedUtility> for CappedSpec {
    fn from(u: CappedUtility) -> Self {
        Self { cap: u.cap }
    }
}

/// `U(x) = x` below H and `H·(x/H)ᵖ` above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CappedPowerSpec", into = "CappedPowerSpec")]
pub struct CappedPowerUtility {
    cap: f64,
    p: f64,
}

impl CappedPowerUtility {
    pub fn new(cap: f64, p: f64) -> Result<Self> {
        if !(cap.is_finite() && cap > 0.0) {
            return Err(invalid(format!("kink level H = {cap} must be positive")));
        }
        check_exponent(p)?;
        Ok(Self { cap, p })
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        check_wealth(x)?;
        Ok(if x < self.cap { x } else { self.cap * (x / self.cap).powf(self.p) })
    }

    /// Conjugate value and the maximizing wealth, by the three-branch formula.
    pub fn dual_with_maximizer(&self, y: f64) -> Result<(f64, f64)> {
        if !(y > 0.0) {
            return Err(domain(format!("dual argument y = {y} must be positive")));
        }
        let (h, p) = (self.cap, self.p);
        Ok(if y <= p {
            let value = h * ((1.0 - p) / p) * p.powf(1.0 / (1.0 - p)) * y.powf(p / (p - 1.0));
            (value, h * (y / p).powf(1.0 / (p - 1.0)))
        } else if y <= 1.0 {
            (h * (1.0 - y), h)
        } else {
            (0.0, 0.0)
        })
    }

    /// Same utility as a power tail with a linear inner piece.
    pub fn to_power_tail(&self) -> PowerTailUtility {
        PowerTailUtility::new(self.p, self.cap.powf(1.0 - self.p), 0.0, self.cap, vec![], vec![1.0])
            .expect("capped power is a valid power tail")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CappedPowerSpec {
    cap: f64,
    p: f64,
}

impl TryFrom<CappedPowerSpec> for CappedPowerUtility {
    type Error = crate::Error;
    fn try_from(s: CappedPowerSpec) -> Result<Self> {
        Self::new(s.cap, s.p)
    }
}

impl From<CappedPowerUtility> for CappedPowerSpec {
    fn from(u: CappedPowerUtility) -> Self {
        Self { cap: u.cap, p: u.p }
    }
}

/// Concave utility with an exact power tail: `U(x) = shift + k·xᵖ` for x ≥ X₀
/// and a continuous increasing concave piecewise-linear inner part on [0, X₀].
///
/// With `switch = 0` there is no inner part and the utility is a pure power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PowerTailSpec", into = "PowerTailSpec")]
pub struct PowerTailUtility {
    p: f64,
    k: f64,
    shift: f64,
    switch: f64,
    /// Inner kinks strictly inside (0, X₀).
    breakpoints: Vec<f64>,
    /// Inner slopes, one per inner piece.
    slopes: Vec<f64>,
    /// U at 0, x_1, …, X₀.
    knot_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerTailSpec {
    p: f64,
    k: f64,
    #[serde(default)]
    shift: f64,
    #[serde(default)]
    switch: f64,
    #[serde(default)]
    breakpoints: Vec<f64>,
    #[serde(default)]
    slopes: Vec<f64>,
}

impl TryFrom<PowerTailSpec> for PowerTailUtility {
    type Error = crate::Error;
    fn try_from(s: PowerTailSpec) -> Result<Self> {
        Self::new(s.p, s.k, s.shift, s.switch, s.breakpoints, s.slopes)
    }
}

impl From<PowerTailUtility> for PowerTailSpec {
    fn from(u: PowerTailUtility) -> Self {
        Self { p: u.p, k: u.k, shift: u.shift, switch: u.switch, breakpoints: u.breakpoints, slopes: u.slopes }
    }
}

impl PowerTailUtility {
    /// `k·xᵖ + shift`.
    pub fn pure(p: f64, k: f64, shift: f64) -> Result<Self> {
        Self::new(p, k, shift, 0.0, vec![], vec![])
    }

    pub fn new(
        p: f64,
        k: f64,
        shift: f64,
        switch: f64,
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
    ) -> Result<Self> {
        check_exponent(p)?;
        if !(k.is_finite() && k > 0.0) {
            return Err(invalid(format!("tail constant k = {k} must be positive")));
        }
        if !shift.is_finite() {
            return Err(invalid("shift must be finite"));
        }
        if !(switch.is_finite() && switch >= 0.0) {
            return Err(invalid(format!("switch point X0 = {switch} must be non-negative")));
        }
        if switch == 0.0 {
            if !breakpoints.is_empty() || !slopes.is_empty() {
                return Err(invalid("a pure power tail has no inner pieces"));
            }
            return Ok(Self { p, k, shift, switch, breakpoints, slopes, knot_values: vec![shift] });
        }
        if slopes.len() != breakpoints.len() + 1 {
            return Err(invalid("inner part needs one more slope than breakpoints"));
        }
        if breakpoints.len() > DEFAULT_MAX_BREAKPOINTS {
            return Err(invalid("too many inner breakpoints"));
        }
        let mut prev = 0.0;
        for &b in &breakpoints {
            if !(b > prev && b < switch) {
                return Err(invalid("inner breakpoints must increase strictly inside (0, X0)"));
            }
            prev = b;
        }
        let mut prev = f64::INFINITY;
        for &c in &slopes {
            if !(c.is_finite() && c > 0.0 && c < prev) {
                return Err(invalid("inner slopes must be positive and strictly decreasing"));
            }
            prev = c;
        }
        let tail_slope = k * p * switch.powf(p - 1.0);
        if *slopes.last().expect("non-empty") < tail_slope * (1.0 - 1e-12) {
            return Err(invalid(format!(
                "last inner slope must be at least the tail slope {tail_slope} at X0 (concavity)"
            )));
        }
        let mut knots: Vec<f64> = std::iter::once(0.0).chain(breakpoints.iter().copied()).collect();
        knots.push(switch);
        let mut knot_values = vec![0.0; knots.len()];
        knot_values[knots.len() - 1] = shift + k * switch.powf(p);
        for i in (0..knots.len() - 1).rev() {
            knot_values[i] = knot_values[i + 1] - slopes[i] * (knots[i + 1] - knots[i]);
        }
        Ok(Self { p, k, shift, switch, breakpoints, slopes, knot_values })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn shift(&self) -> f64 {
        self.shift
    }
    pub fn switch(&self) -> f64 {
        self.switch
    }
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn value_at_zero(&self) -> f64 {
        self.knot_values[0]
    }

    /// Slope of the tail at X₀; the conjugate is a pure power below it.
    pub fn tail_slope_at_switch(&self) -> f64 {
        if self.switch == 0.0 {
            f64::INFINITY
        } else {
            self.k * self.p * self.switch.powf(self.p - 1.0)
        }
    }

    fn knot(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else if i <= self.breakpoints.len() {
            self.breakpoints[i - 1]
        } else {
            self.switch
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        check_wealth(x)?;
        if x >= self.switch {
            return Ok(self.shift + self.k * x.powf(self.p));
        }
        let i = self.breakpoints.partition_point(|&b| b <= x);
        Ok(self.knot_values[i] + self.slopes[i] * (x - self.knot(i)))
    }

    /// `c·U + d` for c > 0.
    pub fn affine(&self, c: f64, d: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(invalid("affine scale must be positive"));
        }
        Self::new(
            self.p,
            c * self.k,
            c * self.shift + d,
            self.switch,
            self.breakpoints.clone(),
            self.slopes.iter().map(|s| c * s).collect(),
        )
    }

    /// Rescaled so that U(0) = 0 and U(x)/xᵖ → 1/(pᵖ(1 − p)^{1−p}).
    pub fn normalized(&self) -> Result<Self> {
        let a = tail_constant_for_normalized(self.p)?;
        let c = a / self.k;
        self.affine(c, -c * self.value_at_zero())
    }

    fn dual(&self) -> PowerTailDual {
        let n = self.breakpoints.len();
        let knots = if self.switch == 0.0 { vec![] } else { (0..=n + 1).map(|i| self.knot(i)).collect() };
        PowerTailDual {
            utility: self.clone(),
            tail_slope: self.tail_slope_at_switch(),
            coefficient: self.k * (1.0 - self.p) * (self.k * self.p).powf(self.p / (1.0 - self.p)),
            q: dual_exponent(self.p),
            knots,
            knot_values: self.knot_values.clone(),
        }
    }
}

/// Conjugate of a [`PowerTailUtility`].
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTailDual {
    utility: PowerTailUtility,
    tail_slope: f64,
    coefficient: f64,
    q: f64,
    knots: Vec<f64>,
    knot_values: Vec<f64>,
}

impl PowerTailDual {
    pub fn utility(&self) -> &PowerTailUtility {
        &self.utility
    }

    /// Index of the maximizing knot for y ≥ tail slope.
    fn knot_index(&self, y: f64) -> usize {
        // knot i is optimal for c_{i+1} ≤ y < c_i, with c_{M+1} = tail slope
        let slopes = &self.utility.slopes;
        slopes.partition_point(|&c| c > y)
    }

    pub fn value(&self, y: f64) -> f64 {
        if y < self.tail_slope {
            if y == 0.0 {
                return f64::INFINITY;
            }
            return self.utility.shift + self.coefficient * y.powf(self.q);
        }
        let i = self.knot_index(y);
        self.knot_values[i] - self.knots[i] * y
    }

    pub fn slope(&self, y: f64) -> f64 {
        if y < self.tail_slope {
            if y == 0.0 {
                return f64::NEG_INFINITY;
            }
            return self.q * self.coefficient * y.powf(self.q - 1.0);
        }
        -self.knots[self.knot_index(y)]
    }

    pub fn curvature(&self, y: f64) -> f64 {
        if y < self.tail_slope {
            self.q * (self.q - 1.0) * self.coefficient * y.powf(self.q - 2.0)
        } else {
            0.0
        }
    }

    fn kinks(&self) -> Vec<(f64, f64)> {
        let slopes = &self.utility.slopes;
        let mut out = Vec::new();
        for (i, &c) in slopes.iter().enumerate() {
            // below c_{i+1} the maximizer is knot i+1, above it knot i
            out.push((c, self.knots[i + 1] - self.knots[i]));
        }
        out
    }
}

/// Any supported utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Utility {
    Capped(CappedUtility),
    CappedPower(CappedPowerUtility),
    Piecewise(PiecewiseLinearUtility),
    PowerTail(PowerTailUtility),
    Constant { level: f64 },
}

impl Utility {
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            Utility::Capped(u) => u.eval(x),
            Utility::CappedPower(u) => u.eval(x),
            Utility::Piecewise(u) => u.eval(x),
            Utility::PowerTail(u) => u.eval(x),
            Utility::Constant { level } => {
                check_wealth(x)?;
                Ok(*level)
            }
        }
    }

    pub fn dual(&self) -> DualUtility {
        match self {
            Utility::Capped(u) => DualUtility::Piecewise(u.to_piecewise().dual()),
            Utility::CappedPower(u) => DualUtility::CappedPower(*u),
            Utility::Piecewise(u) => DualUtility::Piecewise(u.dual()),
            Utility::PowerTail(u) => DualUtility::PowerTail(u.dual()),
            Utility::Constant { level } => DualUtility::Constant(*level),
        }
    }
}

/// Convex conjugate of a [`Utility`].
#[derive(Debug, Clone, PartialEq)]
pub enum DualUtility {
    Piecewise(PiecewiseDual),
    CappedPower(CappedPowerUtility),
    PowerTail(PowerTailDual),
    Constant(f64),
}

impl DualUtility {
    /// Ũ(y) for y ≥ 0; may be +∞ at y = 0.
    pub fn value(&self, y: f64) -> f64 {
        match self {
            DualUtility::Piecewise(d) => d.value(y),
            DualUtility::CappedPower(u) => {
                if y == 0.0 {
                    f64::INFINITY
                } else {
                    u.dual_with_maximizer(y).map(|v| v.0).unwrap_or(f64::NAN)
                }
            }
            DualUtility::PowerTail(d) => d.value(y),
            DualUtility::Constant(c) => *c,
        }
    }

    /// Right derivative Ũ′(y+), i.e. minus the maximizing wealth.
    pub fn slope(&self, y: f64) -> f64 {
        match self {
            DualUtility::Piecewise(d) => d.slope(y),
            DualUtility::CappedPower(u) => {
                if y == 0.0 {
                    f64::NEG_INFINITY
                } else if y >= 1.0 {
                    0.0
                } else if y >= u.p {
                    -u.cap
                } else {
                    -u.cap * (y / u.p).powf(1.0 / (u.p - 1.0))
                }
            }
            DualUtility::PowerTail(d) => d.slope(y),
            DualUtility::Constant(_) => 0.0,
        }
    }

    /// Second derivative away from kinks (zero on linear pieces).
    pub fn curvature(&self, y: f64) -> f64 {
        match self {
            DualUtility::Piecewise(_) | DualUtility::Constant(_) => 0.0,
            DualUtility::CappedPower(u) => {
                if y < u.p {
                    let e = 1.0 / (u.p - 1.0);
                    -u.cap * e * (y / u.p).powf(e - 1.0) / u.p
                } else {
                    0.0
                }
            }
            DualUtility::PowerTail(d) => d.curvature(y),
        }
    }

    /// Points where Ũ′ jumps, with the (positive) jump size.
    pub fn kinks(&self) -> Vec<(f64, f64)> {
        match self {
            DualUtility::Piecewise(d) => {
                let u = d.primal();
                (1..=u.len()).map(|i| (u.slope(i), u.breakpoint(i) - u.breakpoint(i - 1))).collect()
            }
            DualUtility::CappedPower(u) => vec![(1.0, u.cap)],
            DualUtility::PowerTail(d) => d.kinks(),
            DualUtility::Constant(_) => vec![],
        }
    }

    /// Every point where Ũ, Ũ′ or Ũ″ fails to be smooth.
    pub fn breaks(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.kinks().into_iter().map(|(y, _)| y).collect();
        match self {
            DualUtility::CappedPower(u) => out.push(u.p),
            DualUtility::PowerTail(d) if d.tail_slope.is_finite() => out.push(d.tail_slope),
            _ => {}
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Ũ(0) = U(∞), possibly +∞.
    pub fn value_at_zero(&self) -> f64 {
        match self {
            DualUtility::Piecewise(d) => d.primal().upper_level(),
            DualUtility::CappedPower(_) => f64::INFINITY,
            DualUtility::PowerTail(_) => f64::INFINITY,
            DualUtility::Constant(c) => *c,
        }
    }

    /// Ũ′(0+), possibly −∞.
    pub fn slope_at_zero(&self) -> f64 {
        match self {
            DualUtility::Piecewise(d) => -d.primal().breakpoint(d.primal().len()),
            DualUtility::CappedPower(_) | DualUtility::PowerTail(_) => f64::NEG_INFINITY,
            DualUtility::Constant(_) => 0.0,
        }
    }

    /// Ũ(∞) = U(0).
    pub fn value_at_infinity(&self) -> f64 {
        match self {
            DualUtility::Piecewise(d) => d.primal().value_at_zero(),
            DualUtility::CappedPower(_) => 0.0,
            DualUtility::PowerTail(d) => d.utility.value_at_zero(),
            DualUtility::Constant(c) => *c,
        }
    }

    /// Small-y growth exponent q ≤ 0 (zero when Ũ(0) is finite).
    pub fn growth_exponent(&self) -> f64 {
        match self {
            DualUtility::Piecewise(_) | DualUtility::Constant(_) => 0.0,
            DualUtility::CappedPower(u) => dual_exponent(u.p),
            DualUtility::PowerTail(d) => d.q,
        }
    }

    /// The primal utility, recovered exactly.
    pub fn primal(&self) -> Utility {
        match self {
            DualUtility::Piecewise(d) => Utility::Piecewise(d.primal().clone()),
            DualUtility::CappedPower(u) => Utility::CappedPower(*u),
            DualUtility::PowerTail(d) => Utility::PowerTail(d.utility.clone()),
            DualUtility::Constant(c) => Utility::Constant { level: *c },
        }
    }
}

/// Brute-force conjugate `max (U(x) − xy)` over x = 0 and a log-spaced grid
/// of `n` points in [xmax·1e−9, xmax], refined around the best grid point.
pub fn conjugate_numeric(u: &Utility, y: f64, xmax: f64, n: usize) -> Result<f64> {
    if !(y > 0.0) {
        return Err(domain(format!("dual argument y = {y} must be positive")));
    }
    if !(xmax > 0.0) || n < 2 {
        return Err(invalid("need xmax > 0 and at least two grid points"));
    }
    let lo = (xmax * 1e-9).ln();
    let hi = xmax.ln();
    let grid = |j: usize| (lo + (hi - lo) * j as f64 / (n - 1) as f64).exp();
    let mut best = u.eval(0.0)?;
    let mut best_j = None;
    for j in 0..n {
        let x = grid(j);
        let g = u.eval(x)? - x * y;
        if g > best {
            best = g;
            best_j = Some(j);
        }
    }
    // U(x) − xy is concave, so a ternary search on the neighbouring cells finds
    // the maximum even when it sits on a kink between grid points
    if let Some(j) = best_j {
        let (mut a, mut b) = (if j == 0 { 0.0 } else { grid(j - 1) }, grid((j + 1).min(n - 1)));
        for _ in 0..200 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if u.eval(m1)? - m1 * y < u.eval(m2)? - m2 * y {
                a = m1;
            } else {
                b = m2;
            }
        }
        let x = 0.5 * (a + b);
        best = best.max(u.eval(x)? - x * y);
    }
    Ok(best)
}
