//! Innovation-level and conditional VaR/ES estimation and rolling forecasts.
//!
//! Every computation runs in lower-tail orientation. Upper-tail requests
//! (`alpha > 0.5`) negate the returns, solve at `1 - alpha`, and negate the
//! resulting quantities back.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cals::{
    self, fit_cals, preliminary_volatility, refit_garch, GarchRefit, SieveConfig, SieveFit, VolatilityKind,
    VolatilityPath,
};
use crate::el::{self, ElProblem, ElSolution};
use crate::{inference, tail_relations, Error, Result, Stage, Tail};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResidualSource {
    /// `ε̂_t = Y_t / σ̂_t` from the GARCH refit.
    #[default]
    Refined,
    /// `ε̂_t = Y_t / σ̃_t` from the sieve directly.
    Preliminary,
}

/// Refit schedule meaning "estimate once on the first window".
pub const FIT_ONCE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    pub window: usize,
    pub sieve: SieveConfig,
    pub alpha: f64,
    pub tail: Tail,
    pub p: usize,
    pub q: usize,
    /// Steps between CALS/GARCH refits. EL is re-estimated on every window.
    pub refit_every: usize,
    pub residuals: ResidualSource,
    /// Fall back to the grid-search level when EL fails.
    pub el_fallback: bool,
    pub grid_step: f64,
    pub min_el_n: usize,
    pub with_stderr: bool,
}

impl Default for RollingConfig {
    fn default() -> Self {
        RollingConfig {
            window: 500,
            sieve: SieveConfig::default(),
            alpha: 0.05,
            tail: Tail::Lower,
            p: 1,
            q: 1,
            refit_every: 1,
            residuals: ResidualSource::Refined,
            el_fallback: true,
            grid_step: 1e-4,
            min_el_n: el::DEFAULT_MIN_N,
            with_stderr: false,
        }
    }
}

impl RollingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window <= self.sieve.m + 50 {
            return Err(Error::Domain(format!(
                "window {} must exceed m + 50 = {}",
                self.window,
                self.sieve.m + 50
            )));
        }
        self.tail.check_alpha(self.alpha)?;
        if self.refit_every == 0 {
            return Err(Error::Domain("refit_every must be at least 1".into()));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.01) {
            return Err(Error::Domain(format!("grid step {} outside (0, 0.01]", self.grid_step)));
        }
        Ok(())
    }

    /// Quantile level of the lower-tail problem actually solved.
    pub fn lower_alpha(&self) -> f64 {
        match self.tail {
            Tail::Lower => self.alpha,
            Tail::Upper => 1.0 - self.alpha,
        }
    }

    fn orient(&self, returns: &[f64]) -> Vec<f64> {
        match self.tail {
            Tail::Lower => returns.to_vec(),
            Tail::Upper => returns.iter().map(|v| -v).collect(),
        }
    }

    fn sign(&self) -> f64 {
        match self.tail {
            Tail::Lower => 1.0,
            Tail::Upper => -1.0,
        }
    }
}

/// `ε̂_t = Y_t / σ_t` over the dates covered by `vol`.
pub fn innovation_residuals(returns: &[f64], vol: &VolatilityPath) -> Vec<f64> {
    (vol.start..vol.end())
        .map(|t| returns[t] / vol.at(t).max(vol.floor))
        .collect()
}

/// `(Q̂_α(ε), ÊS_α(ε))` from the EL solution, with the sample-mean correction.
pub fn estimate_innovation_risks(residuals: &[f64], el: &ElSolution, alpha: f64) -> Result<(f64, f64)> {
    if residuals.is_empty() {
        return Err(Error::InsufficientData { needed: 0, got: 0 });
    }
    let (sign, a, mu) = if alpha > 0.5 { (-1.0, 1.0 - alpha, -el.mu) } else { (1.0, alpha, el.mu) };
    if !(a > 0.0 && a < 0.5) {
        return Err(Error::Domain(format!("alpha = {alpha} is not a tail level")));
    }
    let tau = el.tau;
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::Domain(format!("tau = {tau} outside (0, 0.5)")));
    }
    let n = residuals.len() as f64;
    let sum: f64 = residuals.iter().sum::<f64>() * sign;
    let es = tail_relations::c_epsilon(tau, a) * mu - tau / (n * (1.0 - 2.0 * tau) * a) * sum;
    Ok((sign * mu, sign * es))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ForecastFlags {
    pub el_fallback: bool,
    pub el_boundary: bool,
    pub cals_not_converged: bool,
    pub stderr_floored: bool,
    pub stderr_failed: bool,
}

impl ForecastFlags {
    /// Pipe-separated list of raised flags, empty when clean.
    pub fn render(&self) -> String {
        let names = [
            (self.el_fallback, "el_fallback"),
            (self.el_boundary, "el_boundary"),
            (self.cals_not_converged, "cals_not_converged"),
            (self.stderr_floored, "stderr_floored"),
            (self.stderr_failed, "stderr_failed"),
        ];
        names
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect::<Vec<_>>()
            .join("|")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskForecast {
    pub date_index: usize,
    pub realized: Option<f64>,
    pub var_tilde: f64,
    pub es_tilde: f64,
    pub var_hat: f64,
    pub es_hat: f64,
    pub sigma_tilde: f64,
    pub sigma_hat: f64,
    /// Expectile level in the orientation of the request.
    pub tau_hat: f64,
    pub mu_hat: f64,
    pub es_eps: f64,
    pub stderr_var: Option<f64>,
    pub stderr_es: Option<f64>,
    pub flags: ForecastFlags,
}

/// Everything estimated on one window, in lower-tail orientation.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub alpha: f64,
    pub sieve: SieveFit,
    pub prelim: VolatilityPath,
    pub refit: GarchRefit,
    pub residuals: Vec<f64>,
    /// Date of the first residual.
    pub residual_start: usize,
    pub el: ElSolution,
    pub el_fallback: bool,
    pub q_eps: f64,
    pub es_eps: f64,
}

impl FittedModel {
    /// `(σ̃_t, σ̂_t)` for any date `t` with its lags available in `returns`.
    pub fn volatility_at(&self, returns: &[f64], t: usize) -> (f64, f64) {
        let floor = self.prelim.floor;
        let eta = &self.sieve.eta;
        let tilde = |s: usize| cals::sieve_sigma(eta, returns, s).max(floor);
        let hat = self.refit.sigma_at(returns, tilde, t).max(floor);
        (tilde(t), hat)
    }
}

fn fit_volatility(window: &[f64], config: &RollingConfig) -> Result<(SieveFit, GarchRefit)> {
    let sieve = fit_cals(window, &config.sieve, None).map_err(|e| e.at(Stage::Cals))?;
    let prelim = preliminary_volatility(&sieve, window);
    let refit = refit_garch(&prelim, window, config.p, config.q).map_err(|e| e.at(Stage::Refit))?;
    Ok((sieve, refit))
}

/// Refined path on a new window with the coefficients held fixed.
fn rebase_refit(refit: &GarchRefit, prelim: &VolatilityPath, window: &[f64]) -> GarchRefit {
    let first = (prelim.start + refit.p).max(refit.q);
    let values = (first..window.len())
        .map(|t| refit.sigma_at(window, |s| prelim.at(s), t).max(prelim.floor))
        .collect();
    GarchRefit {
        refined: VolatilityPath {
            kind: VolatilityKind::Refined,
            start: first,
            values,
            floor: prelim.floor,
        },
        ..refit.clone()
    }
}

/// Residuals, EL and innovation risks for one lower-oriented window.
/// `shifted` marks a window other than the one the volatility fit came from.
fn complete_model(
    window: &[f64],
    config: &RollingConfig,
    sieve: SieveFit,
    refit: GarchRefit,
    shifted: bool,
) -> Result<FittedModel> {
    let alpha = config.lower_alpha();
    let prelim = preliminary_volatility(&sieve, window);
    let refit = if shifted { rebase_refit(&refit, &prelim, window) } else { refit };
    let vol = match config.residuals {
        ResidualSource::Refined => &refit.refined,
        ResidualSource::Preliminary => &prelim,
    };
    let residuals = innovation_residuals(window, vol);
    let residual_start = vol.start;
    let attempt = ElProblem::with_min_n(&residuals, alpha, config.min_el_n).and_then(|p| el::max_el_estimate(&p));
    let (el_sol, el_fallback) = match attempt {
        Ok(sol) => (sol, false),
        Err(err) if config.el_fallback && !matches!(err, Error::InsufficientData { .. }) => {
            (grid_fallback(&residuals, alpha, config.grid_step).map_err(|e| e.at(Stage::EmpiricalLikelihood))?, true)
        }
        Err(err) => return Err(err.at(Stage::EmpiricalLikelihood)),
    };
    let (q_eps, es_eps) =
        estimate_innovation_risks(&residuals, &el_sol, alpha).map_err(|e| e.at(Stage::InnovationRisk))?;
    Ok(FittedModel {
        alpha,
        sieve,
        prelim,
        refit,
        residuals,
        residual_start,
        el: el_sol,
        el_fallback,
        q_eps,
        es_eps,
    })
}

fn grid_fallback(residuals: &[f64], alpha: f64, step: f64) -> Result<ElSolution> {
    let tau = el::grid_search_tau(residuals, alpha, step)?;
    if tau >= 0.5 {
        return Err(Error::EstimationFailure(format!("grid level {tau} is not a lower-tail expectile")));
    }
    let mu = el::sample_expectile(residuals, tau)?;
    Ok(ElSolution {
        mu,
        tau,
        lambda: [0.0, 0.0],
        logel: f64::NAN,
        feasible: false,
        boundary_flag: false,
        reflected: false,
    })
}

/// Fits the full pipeline on one window given in the original orientation.
pub fn fit_model(window_returns: &[f64], config: &RollingConfig) -> Result<FittedModel> {
    config.validate()?;
    let window = config.orient(window_returns);
    let (sieve, refit) = fit_volatility(&window, config)?;
    complete_model(&window, config, sieve, refit, false)
}

/// Forecast for date `t` from a model fit on the lower-oriented `oriented`
/// series (which must contain every lag of `t`).
fn make_forecast(model: &FittedModel, oriented: &[f64], t: usize, config: &RollingConfig) -> RiskForecast {
    let sign = config.sign();
    let (sigma_tilde, sigma_hat) = model.volatility_at(oriented, t);
    let mut flags = ForecastFlags {
        el_fallback: model.el_fallback,
        el_boundary: model.el.boundary_flag,
        cals_not_converged: !model.sieve.converged,
        ..Default::default()
    };
    let (mut stderr_var, mut stderr_es) = (None, None);
    if config.with_stderr {
        match inference::forecast_stderr(model, oriented, t, &config.sieve) {
            Ok(se) => {
                stderr_var = Some(se.stderr_var);
                stderr_es = Some(se.stderr_es);
                flags.stderr_floored = se.floored;
            }
            Err(_) => flags.stderr_failed = true,
        }
    }
    let tau_hat = match config.tail {
        Tail::Lower => model.el.tau,
        Tail::Upper => 1.0 - model.el.tau,
    };
    RiskForecast {
        date_index: t,
        realized: oriented.get(t).map(|v| sign * v),
        var_tilde: sign * sigma_tilde * model.q_eps,
        es_tilde: sign * sigma_tilde * model.es_eps,
        var_hat: sign * sigma_hat * model.q_eps,
        es_hat: sign * sigma_hat * model.es_eps,
        sigma_tilde,
        sigma_hat,
        tau_hat,
        mu_hat: sign * model.el.mu,
        es_eps: sign * model.es_eps,
        stderr_var,
        stderr_es,
        flags,
    }
}

/// One-step-ahead forecast for the date right after the window.
pub fn forecast_one_step(window_returns: &[f64], config: &RollingConfig) -> Result<RiskForecast> {
    config.validate()?;
    if window_returns.len() != config.window {
        return Err(Error::Alignment(format!(
            "window has {} returns, config expects {}",
            window_returns.len(),
            config.window
        )));
    }
    let oriented = config.orient(window_returns);
    let (sieve, refit) = fit_volatility(&oriented, config)?;
    let model = complete_model(&oriented, config, sieve, refit, false)?;
    Ok(make_forecast(&model, &oriented, oriented.len(), config))
}

/// A window whose forecast could not be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFailure {
    pub date_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingOutput {
    /// Forecasts in date order; each carries its realized return.
    pub forecasts: Vec<RiskForecast>,
    pub failures: Vec<WindowFailure>,
}

impl RollingOutput {
    pub fn tau_series(&self) -> Vec<(usize, f64)> {
        self.forecasts.iter().map(|f| (f.date_index, f.tau_hat)).collect()
    }
}

/// Forecasts for every date `T = window..n`, each from the trailing window `[T - window, T)`.
pub fn rolling_forecast(returns: &[f64], config: &RollingConfig) -> Result<RollingOutput> {
    config.validate()?;
    let n = returns.len();
    if n < config.window + 1 {
        return Err(Error::InsufficientData { needed: config.window, got: n });
    }
    let oriented = config.orient(returns);
    let dates: Vec<usize> = (config.window..n).collect();
    let block = config.refit_every.min(dates.len());
    let blocks: Vec<&[usize]> = dates.chunks(block).collect();
    let results: Vec<Vec<std::result::Result<RiskForecast, WindowFailure>>> = blocks
        .par_iter()
        .map(|dates| run_block(&oriented, dates, config))
        .collect();
    let mut out = RollingOutput { forecasts: Vec::new(), failures: Vec::new() };
    for r in results.into_iter().flatten() {
        match r {
            Ok(f) => out.forecasts.push(f),
            Err(e) => out.failures.push(e),
        }
    }
    Ok(out)
}

fn run_block(
    oriented: &[f64],
    dates: &[usize],
    config: &RollingConfig,
) -> Vec<std::result::Result<RiskForecast, WindowFailure>> {
    let fail = |t: usize, e: &Error| WindowFailure { date_index: t, message: e.to_string() };
    let start = dates[0];
    let fitted = fit_volatility(&oriented[start - config.window..start], config);
    let (sieve, refit) = match fitted {
        Ok(v) => v,
        Err(e) => return dates.iter().map(|&t| Err(fail(t, &e))).collect(),
    };
    dates
        .iter()
        .map(|&t| {
            let lo = t - config.window;
            let window = &oriented[lo..t];
            let model = complete_model(window, config, sieve.clone(), refit.clone(), t != start).map_err(|e| fail(t, &e))?;
            let mut f = make_forecast(&model, &oriented[lo..], config.window, config);
            f.date_index = t;
            Ok(f)
        })
        .collect()
}
