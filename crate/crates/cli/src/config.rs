//! TOML run configuration. Command-line flags are folded into the same
//! structure before any computation, so the echoed config is exactly what ran.

use std::path::Path;

use hjbdual::{
    CappedPowerUtility, CappedUtility, Constraint, MarketModel, PiecewiseLinearUtility, PowerTailUtility, Regime, Scheme,
    Utility,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketSection,
    pub utility: UtilitySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<ValueSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frontier: Option<FrontierSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turnpike: Option<TurnpikeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    #[serde(rename = "T", alias = "horizon")]
    pub horizon: f64,
    #[serde(default = "unconstrained")]
    pub constraint: Constraint,
    #[serde(default = "discounted")]
    pub regime: Regime,
}

fn unconstrained() -> Constraint {
    Constraint::Unconstrained
}

fn discounted() -> Regime {
    Regime::Discounted
}

fn one() -> f64 {
    1.0
}

/// Utility family plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilitySection {
    /// U(x) = x ∧ cap.
    Cap { cap: f64 },
    CappedPower { cap: f64, p: f64 },
    Piecewise { breakpoints: Vec<f64>, slopes: Vec<f64>, terminal_level: f64 },
    /// U(x) = shift + k·xᵖ.
    Power {
        p: f64,
        #[serde(default = "one")]
        k: f64,
        #[serde(default)]
        shift: f64,
    },
    PowerTail {
        p: f64,
        #[serde(default = "one")]
        k: f64,
        #[serde(default)]
        shift: f64,
        switch: f64,
        #[serde(default)]
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSection {
    #[serde(default)]
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    pub antithetic: bool,
    pub histogram_bins: usize,
    /// Confidence level of the reported empirical CVaR.
    pub beta: f64,
    /// Loss benchmark c; defaults to the initial wealth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<f64>,
    /// Times for the martingale check; empty means T/4, T/2, 3T/4.
    pub checkpoints: Vec<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            paths: 100_000,
            steps: 1,
            seed: 42,
            scheme: Scheme::ExactCapped,
            x: None,
            antithetic: false,
            histogram_bins: hjbdual::simulate::DEFAULT_HISTOGRAM_BINS,
            beta: 0.95,
            benchmark: None,
            checkpoints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontierSection {
    pub beta: f64,
    pub lambdas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<f64>,
    pub t: f64,
}

impl Default for FrontierSection {
    fn default() -> Self {
        Self { beta: 0.95, lambdas: vec![0.0, 0.25, 0.5, 1.0, 2.0], x: None, benchmark: None, t: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurnpikeSection {
    pub tau_grid: Vec<f64>,
    pub x: f64,
}

impl Default for TurnpikeSection {
    fn default() -> Self {
        Self { tau_grid: vec![1.0, 2.0, 5.0, 10.0, 20.0, 40.0], x: 1.0 }
    }
}

/// Grids for the residual report. Unset bounds are derived from T and the
/// utility's flat threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub t_min: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    pub t_points: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub y_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    pub x_points: usize,
    /// Plain central difference with this step instead of the Richardson default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limits_t: Option<f64>,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            t_min: 0.0,
            t_max: None,
            t_points: 20,
            y_min: 0.05,
            y_max: 5.0,
            y_points: 40,
            x_min: None,
            x_max: None,
            x_points: 40,
            time_step: None,
            limits_t: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn sha256(&self) -> Result<String, CliError> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn market_model(&self) -> hjbdual::Result<MarketModel> {
        let m = &self.market;
        MarketModel::new(m.r, m.mu, m.sigma, m.horizon, m.constraint)
    }

    pub fn utility_model(&self) -> hjbdual::Result<Utility> {
        Ok(match &self.utility {
            UtilitySection::Cap { cap } => Utility::Capped(CappedUtility::new(*cap)?),
            UtilitySection::CappedPower { cap, p } => Utility::CappedPower(CappedPowerUtility::new(*cap, *p)?),
            UtilitySection::Piecewise { breakpoints, slopes, terminal_level } => {
                Utility::Piecewise(PiecewiseLinearUtility::new(breakpoints.clone(), slopes.clone(), *terminal_level)?)
            }
            UtilitySection::Power { p, k, shift } => Utility::PowerTail(PowerTailUtility::pure(*p, *k, *shift)?),
            UtilitySection::PowerTail { p, k, shift, switch, breakpoints, slopes } => Utility::PowerTail(
                PowerTailUtility::new(*p, *k, *shift, *switch, breakpoints.clone(), slopes.clone())?,
            ),
        })
    }
}
