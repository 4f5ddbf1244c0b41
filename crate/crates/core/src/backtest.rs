//! Coverage and ES backtests: Hit series, Kupiec LR, dynamic quantile (DQ)
//! regression test and the exceedance-residual bootstrap.
//!
//! Both tails are handled through an explicit exceedance event with
//! probability `α_exc`: `Y_t ≤ VaR_t` with `α_exc = α` for the lower tail and
//! `Y_t ≥ VaR_t` with `α_exc = 1 - α` for the upper tail.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::garch_sim::rng_for;
use crate::{linalg, stats, Error, Result, Tail};

pub const DQ_LAGS: usize = 4;
pub const MIN_EXCEEDANCES: usize = 5;
pub const DEFAULT_N_BOOT: usize = 5000;

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Alignment(format!("{what}: {a} realized values vs {b} forecasts")));
    }
    Ok(())
}

fn exceeds(y: f64, var: f64, tail: Tail) -> bool {
    match tail {
        Tail::Lower => y <= var,
        Tail::Upper => y >= var,
    }
}

/// `Hit_t = I(exceedance_t) - α_exc`.
pub fn hit_series(realized: &[f64], var: &[f64], alpha: f64, tail: Tail) -> Result<Vec<f64>> {
    check_lengths(realized.len(), var.len(), "hit series")?;
    tail.check_alpha(alpha)?;
    let a = tail.exceedance_probability(alpha);
    Ok(realized
        .iter()
        .zip(var)
        .map(|(&y, &v)| if exceeds(y, v, tail) { 1.0 - a } else { -a })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kupiec unconditional-coverage likelihood ratio for `x` exceedances in `n`.
pub fn kupiec_test(x: usize, n: usize, alpha_exc: f64) -> Result<TestResult> {
    if n == 0 {
        return Err(Error::InsufficientData { needed: 0, got: 0 });
    }
    if x > n {
        return Err(Error::Domain(format!("{x} exceedances out of {n} observations")));
    }
    if !(alpha_exc > 0.0 && alpha_exc < 1.0) {
        return Err(Error::Domain(format!("exceedance probability {alpha_exc} outside (0, 1)")));
    }
    let (xf, nf) = (x as f64, n as f64);
    let xlogy = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * b.ln() };
    let null = xlogy(nf - xf, 1.0 - alpha_exc) + xlogy(xf, alpha_exc);
    let alt = xlogy(nf - xf, 1.0 - xf / nf) + xlogy(xf, xf / nf);
    let statistic = (-2.0 * (null - alt)).max(0.0);
    Ok(TestResult { statistic, p_value: stats::chi2_sf(statistic, 1.0) })
}

/// Kupiec test on a centered Hit series.
pub fn kupiec_from_hits(hits: &[f64], alpha_exc: f64) -> Result<TestResult> {
    let x = hits.iter().filter(|h| **h > 0.0).count();
    kupiec_test(x, hits.len(), alpha_exc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
    pub pinv_used: bool,
}

/// DQ test with regressors `(1, Hit_{t-1..t-4}, VaR_t)`; the first four
/// observations are dropped.
pub fn dq_test(hits: &[f64], var: &[f64], alpha_exc: f64) -> Result<DqResult> {
    check_lengths(hits.len(), var.len(), "dq test")?;
    let n = hits.len();
    if n <= 20 {
        return Err(Error::InsufficientData { needed: 20, got: n });
    }
    let dof = DQ_LAGS + 2;
    let rows = n - DQ_LAGS;
    let x = DMatrix::from_fn(rows, dof, |r, c| {
        let t = r + DQ_LAGS;
        match c {
            0 => 1.0,
            c if c <= DQ_LAGS => hits[t - c],
            _ => var[t],
        }
    });
    let h = DVector::from_iterator(rows, hits[DQ_LAGS..].iter().copied());
    let xth = x.transpose() * &h;
    let xtx = x.transpose() * &x;
    let (sol, pinv_used) = linalg::solve_symmetric(&xtx, &xth)?;
    let statistic = (xth.dot(&sol) / (alpha_exc * (1.0 - alpha_exc))).max(0.0);
    Ok(DqResult {
        statistic,
        p_value: stats::chi2_sf(statistic, dof as f64),
        dof,
        pinv_used,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsBootstrap {
    pub mean_excess: f64,
    pub p_value: f64,
    pub n_boot: usize,
    pub n_exceed: usize,
    /// No resample reached the observed statistic: p is below `1 / n_boot`.
    pub below_resolution: bool,
}

/// Bootstrap test that exceedance residuals `(Y_t - ES_t) / σ_t` have mean
/// zero. Pass `sigma = None` for the unstandardized variant.
#[allow(clippy::too_many_arguments)]
pub fn es_bootstrap_test(
    realized: &[f64],
    var: &[f64],
    es: &[f64],
    sigma: Option<&[f64]>,
    tail: Tail,
    n_boot: usize,
    seed: u64,
) -> Result<EsBootstrap> {
    check_lengths(realized.len(), var.len(), "es bootstrap")?;
    check_lengths(realized.len(), es.len(), "es bootstrap")?;
    if let Some(s) = sigma {
        check_lengths(realized.len(), s.len(), "es bootstrap")?;
    }
    if n_boot == 0 {
        return Err(Error::Domain("n_boot must be positive".into()));
    }
    let excess: Vec<f64> = (0..realized.len())
        .filter(|&t| exceeds(realized[t], var[t], tail))
        .map(|t| {
            let scale = sigma.map_or(1.0, |s| s[t]);
            (realized[t] - es[t]) / scale
        })
        .collect();
    excess_bootstrap(&excess, n_boot, seed)
}

/// Bootstrap p-value for `H₀: E[r] = 0` on exceedance residuals.
pub fn excess_bootstrap(excess: &[f64], n_boot: usize, seed: u64) -> Result<EsBootstrap> {
    let k = excess.len();
    if k < MIN_EXCEEDANCES {
        return Err(Error::InsufficientExceedances { needed: MIN_EXCEEDANCES, found: k });
    }
    let observed = stats::mean(excess);
    let centered: Vec<f64> = excess.iter().map(|r| r - observed).collect();
    let hits = (0..n_boot)
        .into_par_iter()
        .filter(|&b| {
            let mut rng = rng_for(seed, b as u64);
            let mean = (0..k).map(|_| centered[rng.random_range(0..k)]).sum::<f64>() / k as f64;
            mean.abs() >= observed.abs()
        })
        .count();
    Ok(EsBootstrap {
        mean_excess: observed,
        p_value: hits as f64 / n_boot as f64,
        n_boot,
        n_exceed: k,
        below_resolution: hits == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub n: usize,
    pub alpha: f64,
    pub tail: Tail,
    pub alpha_exc: f64,
    pub exceedances: usize,
    pub coverage_rate: f64,
    pub kupiec: TestResult,
    pub dq: Option<DqResult>,
    pub es_bootstrap: Option<EsBootstrap>,
    pub flags: Vec<String>,
}

/// Aligned inputs for a full backtest.
#[derive(Debug, Clone, Copy)]
pub struct BacktestInput<'a> {
    pub realized: &'a [f64],
    pub var: &'a [f64],
    pub es: &'a [f64],
    /// Volatility forecasts for standardizing ES excesses.
    pub sigma: Option<&'a [f64]>,
    pub alpha: f64,
    pub tail: Tail,
}

pub fn run_backtest(input: &BacktestInput, n_boot: usize, seed: u64) -> Result<BacktestReport> {
    check_lengths(input.realized.len(), input.es.len(), "backtest")?;
    let hits = hit_series(input.realized, input.var, input.alpha, input.tail)?;
    let alpha_exc = input.tail.exceedance_probability(input.alpha);
    let exceedances = hits.iter().filter(|h| **h > 0.0).count();
    let n = hits.len();
    let kupiec = kupiec_test(exceedances, n, alpha_exc)?;
    let mut flags = Vec::new();
    let dq = match dq_test(&hits, input.var, alpha_exc) {
        Ok(d) => {
            if d.pinv_used {
                flags.push("dq_pseudo_inverse".to_string());
            }
            Some(d)
        }
        Err(e) => {
            flags.push(format!("dq_skipped: {e}"));
            None
        }
    };
    let es_bootstrap = match es_bootstrap_test(input.realized, input.var, input.es, input.sigma, input.tail, n_boot, seed) {
        Ok(b) => {
            if b.below_resolution {
                flags.push(format!("es_bootstrap_p_below_{}", 1.0 / n_boot as f64));
            }
            Some(b)
        }
        Err(e) => {
            flags.push(format!("es_bootstrap_skipped: {e}"));
            None
        }
    };
    Ok(BacktestReport {
        n,
        alpha: input.alpha,
        tail: input.tail,
        alpha_exc,
        exceedances,
        coverage_rate: exceedances as f64 / n as f64,
        kupiec,
        dq,
        es_bootstrap,
        flags,
    })
}
