//! Dual-control solver for terminal-wealth utility maximization in a
//! Black–Scholes market.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod closedform;
pub mod dualvalue;
pub mod error;
pub mod market;
pub mod normal;
pub mod primal;
pub mod quadrature;
pub mod riskfrontier;
pub mod simulate;
pub mod utility;

pub use error::{Error, Result};
pub use market::{Constraint, KernelParams, MarketModel, Regime};
pub use utility::{
    CappedPowerUtility, CappedUtility, DualUtility, PiecewiseLinearUtility, PowerTailUtility, Utility,
};
pub use dualvalue::{Backend, DualDerivatives, DualValueSurface, LimitsReport};
pub use primal::{DualPoint, PrimalValueSurface};
pub use closedform::CappedSolution;
pub use riskfrontier::{DiscreteLossDistribution, FrontierPoint, RiskSpec};
pub use simulate::{PathStats, Scheme, SimConfig};
