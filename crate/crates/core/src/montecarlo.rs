//! Simulation experiments: Bias/RMSE tables for the tilde and hat forecasts,
//! and the EL versus grid-search comparison of the expectile level.
//!
//! Replication `r` draws from generator stream `r` of the base seed, so every
//! replication is reproducible on its own and aggregation order is fixed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cals::SieveConfig;
use crate::el::{self, ElProblem};
use crate::garch_sim::{self, rng_for, GarchParams, InnovationDist, SimSpec};
use crate::risk::{self, RollingConfig};
use crate::{tail_relations, Error, Result, Tail};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproConfig {
    pub case: u8,
    pub dist: InnovationDist,
    pub alpha: f64,
    pub reps: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub burn_in: usize,
    pub sieve: SieveConfig,
    pub p: usize,
    pub q: usize,
    /// Post-sample dates between sieve and GARCH refits; 1 refits on every
    /// trailing window, `risk::FIT_ONCE` keeps the in-sample fit throughout.
    pub refit_every: usize,
    pub seed: u64,
}

impl Default for ReproConfig {
    fn default() -> Self {
        ReproConfig {
            case: 1,
            dist: InnovationDist::Normal,
            alpha: 0.95,
            reps: 200,
            n_in: 500,
            n_out: 50,
            burn_in: garch_sim::DEFAULT_BURN_IN,
            sieve: SieveConfig::default(),
            p: 1,
            q: 1,
            refit_every: 1,
            seed: 20240101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproRow {
    /// `CALS-EL1` (sieve volatility) or `CALS-EL2` (refit volatility).
    pub method: String,
    /// `VaR` or `ES`.
    pub measure: String,
    pub bias: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproTable {
    pub case: u8,
    pub dist: String,
    pub alpha: f64,
    pub reps_requested: usize,
    pub reps_used: usize,
    pub failures: Vec<String>,
    pub rows: Vec<ReproRow>,
}

impl ReproTable {
    pub fn row(&self, method: &str, measure: &str) -> Option<&ReproRow> {
        self.rows.iter().find(|r| r.method == method && r.measure == measure)
    }
}

/// Per-replication mean absolute and root-mean-square errors, in the order
/// EL1-VaR, EL1-ES, EL2-VaR, EL2-ES.
type RepErrors = [(f64, f64); 4];

/// Rolls a window of `n_in` observations over the next `n_out` dates and
/// scores the one-step forecasts against the simulator's conditional risks.
pub fn run_replication(config: &ReproConfig, rep: usize) -> Result<RepErrors> {
    let params = GarchParams::case(config.case)?;
    let tail = Tail::from_alpha(config.alpha);
    let spec = SimSpec { n: config.n_in + config.n_out, burn_in: config.burn_in, strict_init: false };
    let path = garch_sim::simulate(&params, &config.dist, &spec, config.seed, rep as u64)?;
    let truth = garch_sim::true_conditional_risks(&path, &config.dist, config.alpha, tail)?;
    let rolling = RollingConfig {
        window: config.n_in,
        sieve: config.sieve.clone(),
        alpha: config.alpha,
        tail,
        p: config.p,
        q: config.q,
        refit_every: config.refit_every,
        ..Default::default()
    };
    let out = risk::rolling_forecast(&path.returns, &rolling)?;
    if let Some(f) = out.failures.first() {
        return Err(Error::EstimationFailure(format!("date {}: {}", f.date_index, f.message)));
    }
    let mut abs = [0.0; 4];
    let mut sq = [0.0; 4];
    for f in &out.forecasts {
        let (var, es) = truth[f.date_index];
        let errs = [f.var_tilde - var, f.es_tilde - es, f.var_hat - var, f.es_hat - es];
        for (i, e) in errs.iter().enumerate() {
            abs[i] += e.abs();
            sq[i] += e * e;
        }
    }
    let n = out.forecasts.len() as f64;
    Ok(std::array::from_fn(|i| (abs[i] / n, (sq[i] / n).sqrt())))
}

pub fn repro_tables(config: &ReproConfig) -> Result<ReproTable> {
    if config.reps == 0 || config.n_out == 0 {
        return Err(Error::Domain("reps and n_out must be positive".into()));
    }
    Tail::from_alpha(config.alpha).check_alpha(config.alpha)?;
    let results: Vec<Result<RepErrors>> = (0..config.reps)
        .into_par_iter()
        .map(|r| run_replication(config, r))
        .collect();
    let mut sums = [(0.0, 0.0); 4];
    let mut used = 0;
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(errs) => {
                used += 1;
                for (s, e) in sums.iter_mut().zip(errs) {
                    s.0 += e.0;
                    s.1 += e.1;
                }
            }
            Err(e) => failures.push(format!("rep {r}: {e}")),
        }
    }
    if used == 0 {
        return Err(Error::EstimationFailure(format!("all {} replications failed", config.reps)));
    }
    let labels = [("CALS-EL1", "VaR"), ("CALS-EL1", "ES"), ("CALS-EL2", "VaR"), ("CALS-EL2", "ES")];
    let rows = labels
        .iter()
        .zip(sums)
        .map(|((m, k), (b, r))| ReproRow {
            method: m.to_string(),
            measure: k.to_string(),
            bias: b / used as f64,
            rmse: r / used as f64,
        })
        .collect();
    Ok(ReproTable {
        case: config.case,
        dist: config.dist.label(),
        alpha: config.alpha,
        reps_requested: config.reps,
        reps_used: used,
        failures,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCompareRow {
    pub rep: usize,
    pub tau_el: f64,
    pub tau_grid: f64,
    pub sq_err_el: f64,
    pub sq_err_grid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCompare {
    pub dist: String,
    pub n: usize,
    pub alpha: f64,
    pub tau0: f64,
    pub rows: Vec<TauCompareRow>,
    pub failures: usize,
    pub median_sq_err_el: f64,
    pub median_sq_err_grid: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Squared errors of the EL and grid-search levels against `h(α)` over
/// i.i.d. samples of size `n`.
pub fn tau_compare(dist: &InnovationDist, n: usize, alpha: f64, reps: usize, seed: u64, step: f64) -> Result<TauCompare> {
    let law = dist
        .tail_distribution()
        .ok_or_else(|| Error::Unsupported(format!("no analytic h map for {} innovations", dist.label())))?;
    let tau0 = tail_relations::h_map(law.as_ref(), alpha)?;
    let results: Vec<Option<TauCompareRow>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng_for(seed, rep as u64);
            let x: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            let sol = ElProblem::new(&x, alpha).and_then(|p| el::max_el_estimate(&p)).ok()?;
            let tau_el = sol.oriented_tau();
            let tau_grid = el::grid_search_tau(&x, alpha, step).ok()?;
            Some(TauCompareRow {
                rep,
                tau_el,
                tau_grid,
                sq_err_el: (tau_el - tau0).powi(2),
                sq_err_grid: (tau_grid - tau0).powi(2),
            })
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    let rows: Vec<TauCompareRow> = results.into_iter().flatten().collect();
    Ok(TauCompare {
        dist: dist.label(),
        n,
        alpha,
        tau0,
        median_sq_err_el: median(rows.iter().map(|r| r.sq_err_el).collect()),
        median_sq_err_grid: median(rows.iter().map(|r| r.sq_err_grid).collect()),
        rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ReproConfig {
        ReproConfig {
            reps: 2,
            n_in: 300,
            n_out: 10,
            sieve: SieveConfig::uniform(5, 9).unwrap(),
            ..Default::default()
        }
    }

    #[test]
    fn replications_are_reproducible() {
        let a = repro_tables(&quick()).unwrap();
        let b = repro_tables(&quick()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        assert!(a.row("CALS-EL2", "ES").unwrap().rmse >= a.row("CALS-EL2", "ES").unwrap().bias);
    }

    #[test]
    fn single_replication_rmse_dominates_bias() {
        let t = repro_tables(&ReproConfig { reps: 1, ..quick() }).unwrap();
        assert_eq!(t.reps_used, 1);
        for r in &t.rows {
            assert!(r.rmse >= r.bias && r.bias > 0.0);
        }
    }

    #[test]
    fn tau_compare_medians() {
        let c = tau_compare(&InnovationDist::Normal, 300, 0.05, 20, 3, 1e-4).unwrap();
        assert_eq!(c.rows.len() + c.failures, 20);
        assert!((c.tau0 - 0.012387).abs() < 1e-5);
        assert!(c.median_sq_err_el.is_finite() && c.median_sq_err_grid.is_finite());
    }
}
