//! Two-stage conditional tail-risk estimation for linear-GARCH return series.
//!
//! Volatility is estimated by composite asymmetric least squares (CALS) over a
//! truncated ARCH(m) sieve and optionally refined by a least-squares GARCH refit.
//! The expectile level matching a target quantile level is then determined from
//! the standardized residuals by maximum empirical likelihood, which yields
//! simultaneous one-step-ahead VaR and ES forecasts.
//!
//! Module map:
//!
//! * [`garch_sim`] simulates linear GARCH paths with ground-truth risks.
//! * [`cals`] fits the sieve and refits GARCH coefficients.
//! * [`el`] estimates `(mu, tau)` by empirical likelihood, plus the grid-search baseline.
//! * [`tail_relations`] holds the closed-form quantile/expectile/ES bridges.
//! * [`risk`] assembles forecasts, including rolling windows.
//! * [`inference`] computes plug-in asymptotic standard errors.
//! * [`backtest`] implements the Kupiec, DQ and ES bootstrap tests.
//! * [`montecarlo`] drives the Bias/RMSE and tau-comparison experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod cals;
pub mod el;
mod error;
pub mod garch_sim;
pub mod inference;
mod linalg;
pub mod montecarlo;
pub mod risk;
pub mod stats;
pub mod tail_relations;

pub use error::{Error, Result, Stage};

use serde::{Deserialize, Serialize};

/// Which side of the return distribution a risk measure refers to.
///
/// `alpha` is always the quantile level of the return itself: lower-tail runs
/// use `alpha < 0.5` (e.g. 0.05) and upper-tail runs use `alpha > 0.5`
/// (e.g. 0.95). Upper-tail problems are solved by reflection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    #[default]
    Lower,
    Upper,
}

impl Tail {
    /// Probability of the exceedance event for a quantile level `alpha`.
    pub fn exceedance_probability(self, alpha: f64) -> f64 {
        match self {
            Tail::Lower => alpha,
            Tail::Upper => 1.0 - alpha,
        }
    }

    /// Validates that `alpha` lies strictly inside the half of `(0, 1)` this tail covers.
    pub fn check_alpha(self, alpha: f64) -> Result<()> {
        let ok = match self {
            Tail::Lower => alpha > 0.0 && alpha < 0.5,
            Tail::Upper => alpha > 0.5 && alpha < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "alpha = {alpha} is not a valid {self} tail level"
            )))
        }
    }

    /// Infers the tail from the side of 0.5 the level falls on.
    pub fn from_alpha(alpha: f64) -> Tail {
        if alpha > 0.5 {
            Tail::Upper
        } else {
            Tail::Lower
        }
    }
}

impl std::fmt::Display for Tail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tail::Lower => f.write_str("lower"),
            Tail::Upper => f.write_str("upper"),
        }
    }
}

impl std::str::FromStr for Tail {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lower" => Ok(Tail::Lower),
            "upper" => Ok(Tail::Upper),
            other => Err(Error::Domain(format!("unknown tail `{other}`"))),
        }
    }
}
