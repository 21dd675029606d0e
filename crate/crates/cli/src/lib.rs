//! Command-line front end: `hjbdual <value|simulate|frontier|turnpike|check> --config PATH [overrides]`.
//!
//! Exit status is 0 on success, 1 for usage errors, 2 when the configuration
//! or an argument is invalid and 3 when a numerical routine fails.

pub mod config;
pub mod format;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hjbdual::analysis::{
    dual_residual_with, primal_residual_with, turnpike_sweep, ResidualGrid, TimeDifference, TurnpikeSpec,
    TURNPIKE_GAP_THRESHOLD,
};
use hjbdual::riskfrontier::frontier_sweep;
use hjbdual::simulate::{
    empirical_var_cvar, ensure_exact_capped, martingale_diagnostic, simulate_euler, simulate_exact_capped,
};
use hjbdual::{DualValueSurface, PrimalValueSurface, RiskSpec, Scheme, SimConfig, Utility};
use serde_json::{Map, Value};

pub use config::RunConfig;
use config::{CheckSection, FrontierSection, SimulationSection, TurnpikeSection, UtilitySection, ValueSection};
use format::{csv_row, round9, sig9};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Model(#[from] hjbdual::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(hjbdual::Error::Numeric(_)) => 3,
            _ => 2,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Model(hjbdual::Error::InvalidParameter(msg.into()))
}

fn numeric(msg: impl Into<String>) -> CliError {
    CliError::Model(hjbdual::Error::Numeric(msg.into()))
}

#[derive(Parser, Debug)]
#[command(name = "hjbdual", version, about = "Dual-control solver for terminal-wealth utility maximization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Write the result to this file instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print the effective configuration (file plus flags) and exit
    #[arg(long)]
    print_config: bool,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SchemeArg {
    ExactCapped,
    EulerFeedback,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Value, dual point and optimal control at (t, x)
    #[command(allow_negative_numbers = true)]
    Value {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        x: Option<f64>,
    },
    /// Monte Carlo estimate of E[U(X_T)] under the optimal control
    #[command(allow_negative_numbers = true)]
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        x: Option<f64>,
        #[arg(long)]
        antithetic: bool,
        /// Write the terminal-wealth histogram here as JSON
        #[arg(long)]
        histogram: Option<PathBuf>,
        /// Write the value-process checkpoint table here as CSV
        #[arg(long)]
        martingale: Option<PathBuf>,
    },
    /// Expected utility against CVaR over a grid of risk weights
    #[command(allow_negative_numbers = true)]
    Frontier {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        beta: Option<f64>,
        /// Comma-separated risk weights, ascending
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        #[arg(long)]
        benchmark: Option<f64>,
        #[arg(long)]
        x: Option<f64>,
    },
    /// Risky amount against the Merton amount over a horizon grid
    #[command(allow_negative_numbers = true)]
    Turnpike {
        #[command(flatten)]
        common: Common,
        /// Comma-separated times to maturity, ascending
        #[arg(long, value_delimiter = ',')]
        tau: Option<Vec<f64>>,
        #[arg(long)]
        x: Option<f64>,
    },
    /// HJB residuals and boundary limits as JSON
    #[command(allow_negative_numbers = true)]
    Check {
        #[command(flatten)]
        common: Common,
        /// Time of the boundary-limit probes
        #[arg(long)]
        t: Option<f64>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Value { common, .. }
            | Command::Simulate { common, .. }
            | Command::Frontier { common, .. }
            | Command::Turnpike { common, .. }
            | Command::Check { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Value { .. } => "value",
            Command::Simulate { .. } => "simulate",
            Command::Frontier { .. } => "frontier",
            Command::Turnpike { .. } => "turnpike",
            Command::Check { .. } => "check",
        }
    }

    /// Folds the flags into the configuration.
    fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Value { t, x, .. } => {
                let s = cfg.value.get_or_insert_with(ValueSection::default);
                if let Some(t) = t {
                    s.t = *t;
                }
                if x.is_some() {
                    s.x = *x;
                }
            }
            Command::Simulate { seed, paths, steps, scheme, x, antithetic, .. } => {
                let s = cfg.simulation.get_or_insert_with(SimulationSection::default);
                if let Some(v) = seed {
                    s.seed = *v;
                }
                if let Some(v) = paths {
                    s.paths = *v;
                }
                if let Some(v) = steps {
                    s.steps = *v;
                }
                if let Some(v) = scheme {
                    s.scheme = match v {
                        SchemeArg::ExactCapped => Scheme::ExactCapped,
                        SchemeArg::EulerFeedback => Scheme::EulerFeedback,
                    };
                }
                if x.is_some() {
                    s.x = *x;
                }
                if *antithetic {
                    s.antithetic = true;
                }
            }
            Command::Frontier { beta, lambda, benchmark, x, .. } => {
                let s = cfg.frontier.get_or_insert_with(FrontierSection::default);
                if let Some(v) = beta {
                    s.beta = *v;
                }
                if let Some(v) = lambda {
                    s.lambdas = v.clone();
                }
                if benchmark.is_some() {
                    s.benchmark = *benchmark;
                }
                if x.is_some() {
                    s.x = *x;
                }
            }
            Command::Turnpike { tau, x, .. } => {
                let s = cfg.turnpike.get_or_insert_with(TurnpikeSection::default);
                if let Some(v) = tau {
                    s.tau_grid = v.clone();
                }
                if let Some(v) = x {
                    s.x = *v;
                }
            }
            Command::Check { t, .. } => {
                let s = cfg.check.get_or_insert_with(CheckSection::default);
                if t.is_some() {
                    s.limits_t = *t;
                }
            }
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("hjbdual {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

fn execute(cmd: &Command) -> Result<(), CliError> {
    let common = cmd.common();
    let mut cfg = RunConfig::load(&common.config)?;
    cmd.apply(&mut cfg);
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(invalid("--threads must be positive"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = match (cmd, &cfg.simulation) {
        (Command::Simulate { .. }, Some(s)) => s.seed.to_string(),
        _ => "none".to_string(),
    };
    let header = format!("# hjbdual {VERSION} command={} seed={seed} config_sha256={}", cmd.name(), cfg.sha256()?);
    let body = if common.print_config {
        format!("{header}\n{}", cfg.to_toml()?)
    } else {
        match cmd {
            Command::Value { .. } => value(&cfg, &header)?,
            Command::Simulate { histogram, martingale, .. } => {
                simulate(&cfg, &header, histogram.as_deref(), martingale.as_deref())?
            }
            Command::Frontier { .. } => frontier(&cfg, &header)?,
            Command::Turnpike { .. } => turnpike(&cfg, &header)?,
            Command::Check { .. } => check(&cfg, &seed)?,
        }
    };
    emit(common.output.as_deref(), &body)
}

fn emit(path: Option<&Path>, body: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, body)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn primal_surface(cfg: &RunConfig) -> Result<PrimalValueSurface, CliError> {
    let market = cfg.market_model()?;
    let dual = cfg.utility_model()?.dual();
    let surface = DualValueSurface::with_default_backend(market, dual, cfg.market.regime)?;
    Ok(PrimalValueSurface::new(surface))
}

fn require_finite(values: &[(&str, f64)]) -> Result<(), CliError> {
    for (name, v) in values {
        if !v.is_finite() {
            return Err(numeric(format!("{name} is not finite")));
        }
    }
    Ok(())
}

fn value(cfg: &RunConfig, header: &str) -> Result<String, CliError> {
    let s = cfg.value.clone().unwrap_or_default();
    let x = s.x.ok_or_else(|| invalid("value needs x (flag --x or [value] x)"))?;
    let t = s.t;
    let primal = primal_surface(cfg)?;
    // in the discounted regime the surface works in bank-account units
    let xf = primal.forward_wealth(t, x)?;
    let u = primal.u(t, xf)?;
    let (y, u_xx, pi, amount) = if xf >= primal.x_star() {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let tau = cfg.market_model()?.time_to_maturity(t)?;
        (primal.y_of_x(t, xf)?, primal.u_xx(t, xf)?, primal.feedback_control(t, xf)?, primal.risky_amount(tau, xf)?)
    };
    let fields = [("t", t), ("x", x), ("u", u), ("y", y), ("u_x", y), ("u_xx", u_xx), ("pi", pi), ("risky_amount", amount)];
    require_finite(&fields)?;
    let mut out = format!("{header}\n");
    for (name, v) in fields {
        out.push_str(&format!("{name}={}\n", sig9(v)));
    }
    Ok(out)
}

fn simulate(
    cfg: &RunConfig,
    header: &str,
    histogram: Option<&Path>,
    martingale: Option<&Path>,
) -> Result<String, CliError> {
    let s = cfg.simulation.clone().unwrap_or_default();
    let x = s.x.ok_or_else(|| invalid("simulate needs x (flag --x or [simulation] x)"))?;
    let market = cfg.market_model()?;
    let primal = primal_surface(cfg)?;
    let sim = SimConfig {
        paths: s.paths,
        steps: s.steps,
        seed: s.seed,
        scheme: s.scheme,
        antithetic: s.antithetic,
        histogram_bins: s.histogram_bins,
    };
    let stats = match s.scheme {
        Scheme::ExactCapped => simulate_exact_capped(&market, ensure_exact_capped(&primal)?, x, &sim)?,
        Scheme::EulerFeedback => simulate_euler(&market, &primal, x, &sim)?,
    };
    let risk = RiskSpec::new(s.beta, s.benchmark.unwrap_or(x))?;
    let (var, cvar) = empirical_var_cvar(&stats, &risk)?;
    require_finite(&[("mean", stats.mean), ("stderr", stats.stderr)])?;

    let scheme = match s.scheme {
        Scheme::ExactCapped => "exact_capped",
        Scheme::EulerFeedback => "euler_feedback",
    };
    let mut out = format!("{header}\n# scheme={scheme} antithetic={}\n", s.antithetic);
    out.push_str("paths,steps,exploded,mean,stderr,beta,var,cvar\n");
    out.push_str(&format!(
        "{},{},{},{}\n",
        stats.paths,
        stats.steps,
        stats.exploded,
        csv_row(&[stats.mean, stats.stderr, s.beta, var, cvar])
    ));

    if let Some(path) = histogram {
        let bins: Vec<Value> = stats
            .histogram
            .iter()
            .map(|b| {
                let mut m = Map::new();
                m.insert("lower".into(), number(b.lower));
                m.insert("upper".into(), number(b.upper));
                m.insert("mass".into(), number(b.mass));
                Value::Object(m)
            })
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&bins).map_err(|e| numeric(e.to_string()))? + "\n")?;
    }
    if let Some(path) = martingale {
        let t_end = market.horizon();
        let cps = if s.checkpoints.is_empty() { vec![0.25 * t_end, 0.5 * t_end, 0.75 * t_end] } else { s.checkpoints.clone() };
        let report = martingale_diagnostic(&market, &primal, x, &sim, &cps)?;
        let mut table = format!("{header}\n# initial_value={}\nt,mean,stderr,deviation\n", sig9(report.initial_value));
        for c in &report.checkpoints {
            table.push_str(&csv_row(&[c.t, c.mean, c.stderr, c.deviation]));
            table.push('\n');
        }
        std::fs::write(path, table)?;
    }
    Ok(out)
}

fn frontier(cfg: &RunConfig, header: &str) -> Result<String, CliError> {
    let s = cfg.frontier.clone().unwrap_or_default();
    let h = match cfg.utility {
        UtilitySection::Cap { cap } => cap,
        _ => return Err(invalid("the frontier is computed for utility kind = \"cap\"")),
    };
    let x = s.x.ok_or_else(|| invalid("frontier needs x (flag --x or [frontier] x)"))?;
    let risk = RiskSpec::new(s.beta, s.benchmark.unwrap_or(x))?;
    let points = frontier_sweep(&s.lambdas, &risk, h, &cfg.market_model()?, s.t, x)?;
    let bracket = points.iter().all(|p| p.g_small_max < 0.0 && p.g_large_min > 0.0);
    let mut out = format!("{header}\n# inner bracket g(0+) < 0 < g(inf) held at every evaluated y: {bracket}\n");
    out.push_str("lambda,var,cvar,expected_utility,objective\n");
    for p in &points {
        require_finite(&[("cvar", p.cvar), ("expected_utility", p.expected_utility)])?;
        out.push_str(&csv_row(&[p.lambda, p.var, p.cvar, p.expected_utility, p.objective]));
        out.push('\n');
    }
    Ok(out)
}

fn turnpike(cfg: &RunConfig, header: &str) -> Result<String, CliError> {
    let s = cfg.turnpike.clone().unwrap_or_default();
    let utility = match cfg.utility_model()? {
        Utility::PowerTail(u) => u,
        Utility::CappedPower(u) => u.to_power_tail(),
        _ => return Err(invalid("the turnpike sweep needs a power, power_tail or capped_power utility")),
    };
    let spec = TurnpikeSpec::new(utility, cfg.market_model()?, s.tau_grid.clone(), s.x)?;
    let rows = turnpike_sweep(&spec)?;
    let mut out = format!(
        "{header}\n# merton_target={} gap_threshold={} (the threshold is a calibration choice, not a derived bound)\n",
        sig9(spec.merton_target()),
        sig9(TURNPIKE_GAP_THRESHOLD)
    );
    out.push_str("tau,risky_amount,gap\n");
    let mut failures = Vec::new();
    for r in &rows {
        out.push_str(&csv_row(&[r.tau, r.risky_amount, r.gap]));
        out.push('\n');
        if let Some(e) = &r.error {
            failures.push(format!("# tau={} failed: {e}\n", sig9(r.tau)));
        }
    }
    for f in &failures {
        out.push_str(f);
    }
    if !rows.is_empty() && failures.len() == rows.len() {
        return Err(numeric("every turnpike row failed"));
    }
    Ok(out)
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(round9(v)).map(Value::Number).unwrap_or(Value::Null)
}

fn check(cfg: &RunConfig, seed: &str) -> Result<String, CliError> {
    let s = cfg.check.clone().unwrap_or_default();
    let market = cfg.market_model()?;
    let t_end = market.horizon();
    let primal = primal_surface(cfg)?;
    let surface = primal.dual_surface();
    let diff = match s.time_step {
        Some(h) => TimeDifference::plain(h),
        None => TimeDifference::default_for(t_end),
    };
    let t_range = (s.t_min, s.t_max.unwrap_or(0.9 * t_end), s.t_points);
    let dual_grid = ResidualGrid::new(t_range, (s.y_min, s.y_max, s.y_points), true)?;
    let dual = dual_residual_with(surface, &dual_grid, diff)?;

    let x_star = primal.x_star();
    let (x_lo, x_hi, log) = if x_star.is_finite() { (0.05 * x_star, 0.95 * x_star, false) } else { (0.1, 10.0, true) };
    let x_grid = ResidualGrid::new(t_range, (s.x_min.unwrap_or(x_lo), s.x_max.unwrap_or(x_hi), s.x_points), log)?;
    let primal_report = primal_residual_with(&primal, &x_grid, diff)?;

    let limits = surface.limits_report(s.limits_t.unwrap_or(0.5 * t_end))?;

    let mut m = Map::new();
    m.insert("version".into(), Value::String(VERSION.into()));
    m.insert("command".into(), Value::String("check".into()));
    m.insert("seed".into(), Value::String(seed.into()));
    m.insert("config_sha256".into(), Value::String(cfg.sha256()?));
    m.insert("time_step".into(), number(diff.step));
    m.insert("richardson".into(), Value::Bool(diff.richardson));
    m.insert("dual_residual_max".into(), number(dual.max_abs_residual));
    m.insert("dual_residual_argmax_t".into(), number(dual.argmax_t));
    m.insert("dual_residual_argmax_y".into(), number(dual.argmax_state));
    m.insert("dual_points".into(), Value::from(dual.points_evaluated));
    m.insert("primal_residual_max".into(), number(primal_report.max_abs_residual));
    m.insert("primal_residual_argmax_t".into(), number(primal_report.argmax_t));
    m.insert("primal_residual_argmax_x".into(), number(primal_report.argmax_state));
    m.insert("primal_points".into(), Value::from(primal_report.points_evaluated));
    m.insert("near_terminal_rows".into(), Value::from(dual.near_terminal_times.len()));
    m.insert("limits_t".into(), number(limits.t));
    m.insert("v_small".into(), number(limits.v_small));
    m.insert("v_y_small".into(), number(limits.v_y_small));
    m.insert("v_large".into(), number(limits.v_large));
    m.insert("v_y_large".into(), number(limits.v_y_large));
    m.insert("v_small_deviation".into(), number(limits.v_small_deviation));
    m.insert("v_y_small_deviation".into(), number(limits.v_y_small_deviation));
    m.insert("v_large_deviation".into(), number(limits.v_large_deviation));
    m.insert("v_y_large_deviation".into(), number(limits.v_y_large_deviation));
    let text = serde_json::to_string_pretty(&Value::Object(m)).map_err(|e| numeric(e.to_string()))?;
    Ok(text + "\n")
}
