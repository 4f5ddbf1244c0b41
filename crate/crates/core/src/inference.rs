//! Plug-in asymptotic variances for the sieve, the GARCH refit, the EL pair
//! `(μ̂, τ̂)` and the one-step risk forecasts.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::cals::{self, refit_regressor, GarchRefit, SieveConfig, SieveFit, VolatilityPath};
use crate::el::ElSolution;
use crate::risk::FittedModel;
use crate::{linalg, stats, Error, Result};

/// Density estimates below this are treated as zero.
pub const DENSITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichParts {
    /// Σ̂ in free order `(u_1..u_K, a_1..a_m)`.
    pub sigma_hat_matrix: DMatrix<f64>,
    pub omega_hat: DMatrix<f64>,
    pub xi_hat: DMatrix<f64>,
    /// Block of Ξ̂ for `(a_1..a_m)`.
    pub xi22: DMatrix<f64>,
    pub pinv_used: bool,
    /// Number of observations the averages are taken over.
    pub n: usize,
}

impl SandwichParts {
    /// `sqrt(diag(Ξ̂) / n)` in free order.
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.xi_hat.nrows())
            .map(|i| (self.xi_hat[(i, i)].max(0.0) / self.n as f64).sqrt())
            .collect()
    }
}

/// Sandwich `Σ̂⁻¹Ω̂Σ̂⁻¹` for the CALS estimator. `hac_lag` switches Ω̂ to a
/// Bartlett-weighted long-run variance.
pub fn cals_sandwich(
    fit: &SieveFit,
    returns: &[f64],
    config: &SieveConfig,
    hac_lag: Option<usize>,
) -> Result<SandwichParts> {
    let design = cals::build_design(returns, config.m)?;
    let (k_n, m) = (config.k(), config.m);
    let dim = k_n + m;
    let rows = design.rows();
    let u = fit.expectiles();
    let a = &fit.eta[1..];
    let mut sigma = DMatrix::<f64>::zeros(dim, dim);
    for r in 0..rows {
        let x = design.row(r);
        let lags = &x[1..];
        let s = 1.0 + lags.iter().zip(a).map(|(l, c)| l * c).sum::<f64>();
        let y = returns[config.m + r];
        let mut waa = 0.0;
        for (k, &tau) in config.tau_grid.iter().enumerate() {
            let v = y - u[k] * s;
            let w = if v <= 0.0 { 1.0 - tau } else { tau };
            // ξ_k = (s e_k, u_k x̄).
            sigma[(k, k)] += 2.0 * w * s * s;
            for (i, l) in lags.iter().enumerate() {
                sigma[(k, k_n + i)] += 2.0 * w * s * u[k] * l;
            }
            waa += 2.0 * w * u[k] * u[k];
        }
        for i in 0..m {
            for j in i..m {
                sigma[(k_n + i, k_n + j)] += waa * lags[i] * lags[j];
            }
        }
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            sigma[(j, i)] = sigma[(i, j)];
        }
    }
    sigma /= rows as f64;

    let scores = cals::cals_scores(fit, returns, config)?;
    let psi = DMatrix::from_fn(rows, dim, |r, c| scores[r][c]);
    let mut omega = psi.transpose() * &psi;
    if let Some(lag) = hac_lag {
        for l in 1..=lag.min(rows.saturating_sub(1)) {
            let w = 1.0 - l as f64 / (lag + 1) as f64;
            let head = psi.rows(l, rows - l);
            let tail = psi.rows(0, rows - l);
            let gamma = head.transpose() * tail;
            omega += (&gamma + gamma.transpose()) * w;
        }
    }
    omega /= rows as f64;
    linalg::symmetrize(&mut omega);

    let (inv, pinv_used) = linalg::inverse_or_pinv(&sigma)?;
    let mut xi = &inv * &omega * inv.transpose();
    linalg::symmetrize(&mut xi);
    let xi22 = xi.view((k_n, k_n), (m, m)).into_owned();
    Ok(SandwichParts {
        sigma_hat_matrix: sigma,
        omega_hat: omega,
        xi_hat: xi,
        xi22,
        pinv_used,
        n: rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefitVariance {
    pub gamma10: DMatrix<f64>,
    pub gamma20: DMatrix<f64>,
    /// Asymptotic covariance of `√n(φ̂ - φ)` in `(β₀, γ₁..γ_q, β₁..β_p)` order.
    pub xi_phi: DMatrix<f64>,
    pub gamma10_condition: f64,
}

/// `Ξ_φ = Γ₁₀⁻¹Γ₂₀Ξ₂₂(Γ₁₀⁻¹Γ₂₀)ᵀ`.
pub fn garch_refit_variance(
    refit: &GarchRefit,
    prelim: &VolatilityPath,
    returns: &[f64],
    xi22: &DMatrix<f64>,
) -> Result<RefitVariance> {
    let (p, q) = (refit.p, refit.q);
    let m = xi22.nrows();
    let dim = 1 + p + q;
    let first = refit.first_date();
    let end = refit.refined.end();
    let rows = end - first;
    let betas = &refit.phi[1 + q..];
    let lags = |t: usize| -> DVector<f64> { DVector::from_fn(m, |i, _| returns[t - 1 - i].abs()) };
    let mut g10 = DMatrix::<f64>::zeros(dim, dim);
    let mut g20 = DMatrix::<f64>::zeros(dim, m);
    for t in first..end {
        let z = DVector::from_vec(refit_regressor(prelim, returns, p, q, t));
        let mut deriv = lags(t);
        for (j, b) in betas.iter().enumerate() {
            deriv -= lags(t - j - 1) * *b;
        }
        g10 += &z * z.transpose();
        g20 += &z * deriv.transpose();
    }
    g10 /= rows as f64;
    g20 /= rows as f64;
    let cond = linalg::condition_number(&g10);
    if !cond.is_finite() || cond > 1e13 {
        return Err(Error::RankDeficient(format!(
            "refit regressor second-moment matrix is singular (condition number {cond:.3e})"
        )));
    }
    let a = g10
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("refit regressor matrix not positive definite".into()))?
        .solve(&g20);
    let mut xi_phi = &a * xi22 * a.transpose();
    linalg::symmetrize(&mut xi_phi);
    Ok(RefitVariance {
        gamma10: g10,
        gamma20: g20,
        xi_phi,
        gamma10_condition: cond,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElVariance {
    /// Finite-sample covariance of `(μ̂, τ̂)`.
    pub cov: [[f64; 2]; 2],
    pub sigma0: [[f64; 2]; 2],
    pub sigma1: [[f64; 2]; 2],
    pub f_hat: f64,
    pub cdf_hat: f64,
    pub density_floored: bool,
    pub n: usize,
}

/// Covariance `Σ̂₁⁻¹Σ̂₀Σ̂₁⁻ᵀ/N` of the EL estimates, in lower-tail orientation.
pub fn el_variance(el: &ElSolution, residuals: &[f64], alpha: f64, bandwidth: Option<f64>) -> Result<ElVariance> {
    let (res, mu, a): (Vec<f64>, f64, f64) = if el.reflected {
        (residuals.iter().map(|v| -v).collect(), -el.mu, 1.0 - alpha)
    } else {
        (residuals.to_vec(), el.mu, alpha)
    };
    if !(a > 0.0 && a < 0.5) {
        return Err(Error::Domain(format!("alpha = {alpha} does not match the solution orientation")));
    }
    let tau = el.tau;
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::Domain(format!("tau = {tau} outside (0, 0.5)")));
    }
    let n = res.len();
    let c = tau / (1.0 - 2.0 * tau);
    let (mut s11, mut s12) = (0.0, 0.0);
    for &e in &res {
        let d = e - mu;
        let ind = if e < mu { 1.0 } else { 0.0 };
        let w1 = d * ind + c * d;
        let w2 = ind - a;
        s11 += w1 * w1;
        s12 += w1 * w2;
    }
    let nf = n as f64;
    let sigma0 = Matrix2::new(s11 / nf, s12 / nf, s12 / nf, a * (1.0 - a));
    let h = bandwidth.unwrap_or_else(|| stats::silverman_bandwidth(&res));
    let raw_f = stats::gaussian_kde(&res, mu, h);
    let density_floored = !(raw_f >= DENSITY_FLOOR);
    let f_hat = raw_f.max(DENSITY_FLOOR);
    let cdf_hat = stats::ecdf_strict(&res, mu);
    let one_m = 1.0 - 2.0 * tau;
    let sigma1 = Matrix2::new(-(cdf_hat + c), -mu / (one_m * one_m), f_hat, 0.0);
    let inv = sigma1
        .try_inverse()
        .ok_or_else(|| Error::Singular("EL Jacobian is singular (zero quantile estimate)".into()))?;
    let cov = inv * sigma0 * inv.transpose() / nf;
    let to_arr = |m: &Matrix2<f64>| [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]];
    Ok(ElVariance {
        cov: to_arr(&cov),
        sigma0: to_arr(&sigma0),
        sigma1: to_arr(&sigma1),
        f_hat,
        cdf_hat,
        density_floored,
        n,
    })
}

/// Inputs to the forecast delta-method variance, all in lower-tail orientation.
#[derive(Debug, Clone)]
pub struct ForecastTerms {
    pub sigma_hat: f64,
    pub q_eps: f64,
    pub es_eps: f64,
    /// `z_T` for the forecast date.
    pub z: DVector<f64>,
    /// `Σ̂₂ = mean z_t ε̂_t / (φ̂ᵀz_t)`.
    pub sigma2: DVector<f64>,
    pub e: [f64; 4],
    pub sigma1: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastStdErr {
    pub stderr_var: f64,
    pub stderr_es: f64,
    pub avar_var: f64,
    pub avar_es: f64,
    /// A negative plug-in variance was floored at zero.
    pub floored: bool,
}

/// Delta-method standard errors of the VaR and ES forecasts.
pub fn risk_forecast_variance(terms: &ForecastTerms, xi_phi: &DMatrix<f64>, n: usize) -> Result<ForecastStdErr> {
    let s1 = Matrix2::new(terms.sigma1[0][0], terms.sigma1[0][1], terms.sigma1[1][0], terms.sigma1[1][1]);
    let inv = s1
        .try_inverse()
        .ok_or_else(|| Error::Singular("EL Jacobian is singular".into()))?;
    let v = inv * Vector2::new(terms.e[0], terms.e[1]);
    let lambda1 = terms.sigma2.transpose() * v[0];
    let lambda2 = terms.sigma2.transpose() * (terms.e[2] * v[0] + terms.e[3] * v[1]);
    let avar = |lambda: &nalgebra::RowDVector<f64>, level: f64| -> f64 {
        let s = terms.sigma_hat;
        let a = (lambda * xi_phi * lambda.transpose())[(0, 0)];
        let b = (terms.z.transpose() * xi_phi * &terms.z)[(0, 0)];
        let c = (lambda * xi_phi * &terms.z)[(0, 0)];
        s * s * a + level * level * b + 2.0 * s * level * c
    };
    let av = avar(&lambda1, terms.q_eps);
    let ae = avar(&lambda2, terms.es_eps);
    let nf = n as f64;
    Ok(ForecastStdErr {
        stderr_var: (av.max(0.0) / nf).sqrt(),
        stderr_es: (ae.max(0.0) / nf).sqrt(),
        avar_var: av,
        avar_es: ae,
        floored: av < 0.0 || ae < 0.0,
    })
}

/// Assembles every plug-in piece for a fitted window and returns the
/// forecast standard errors for date `t = window.len()`.
pub fn forecast_stderr(model: &FittedModel, oriented: &[f64], t: usize, config: &SieveConfig) -> Result<ForecastStdErr> {
    let window = &oriented[..t];
    let parts = cals_sandwich(&model.sieve, window, config, None)?;
    let refit_var = garch_refit_variance(&model.refit, &model.prelim, window, &parts.xi22)?;
    let elv = el_variance(&model.el, &model.residuals, model.alpha, None)?;
    let tau = model.el.tau;
    let one_m = 1.0 - 2.0 * tau;
    let c = tau / one_m;
    let mean_eps = stats::mean(&model.residuals);
    let e = [
        elv.cdf_hat + c,
        elv.f_hat,
        crate::tail_relations::c_epsilon(tau, model.alpha),
        (model.el.mu - mean_eps) / (model.alpha * one_m * one_m),
    ];
    let (p, q) = (model.refit.p, model.refit.q);
    let refined = &model.refit.refined;
    let mut sigma2 = DVector::<f64>::zeros(1 + p + q);
    for t_i in refined.start..refined.end() {
        let z = DVector::from_vec(refit_regressor(&model.prelim, window, p, q, t_i));
        let s = refined.at(t_i);
        sigma2 += z * (window[t_i] / s / s);
    }
    sigma2 /= refined.len() as f64;
    let (_, sigma_hat) = model.volatility_at(oriented, t);
    let eta = &model.sieve.eta;
    let floor = model.prelim.floor;
    let mut z = vec![1.0];
    for j in 1..=q {
        z.push(oriented[t - j].abs());
    }
    for i in 1..=p {
        z.push(cals::sieve_sigma(eta, oriented, t - i).max(floor));
    }
    let terms = ForecastTerms {
        sigma_hat,
        q_eps: model.q_eps,
        es_eps: model.es_eps,
        z: DVector::from_vec(z),
        sigma2,
        e,
        sigma1: elv.sigma1,
    };
    risk_forecast_variance(&terms, &refit_var.xi_phi, parts.n)
}
