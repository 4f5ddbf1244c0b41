//! Composite asymmetric least squares (CALS) over a truncated ARCH(m) sieve.
//!
//! The model `μ_{τ_k}(Y_t | F_{t-1}) = u_k (1 + Σ_{i=1}^m a_i |Y_{t-i}|)` is fit
//! jointly across `K` expectile levels by minimizing
//! `Σ_t Σ_k ρ_{τ_k}(Y_t - u_k ηᵀx_t)` with `a₀ = 1` pinned. The fitted sieve
//! gives a preliminary volatility path, which is then regressed on its own
//! lags and lagged absolute returns to recover GARCH(p, q) coefficients.
//!
//! Parameters are handled in "free" order `(u_1..u_K, a_1..a_m)`; `a₀` never
//! appears in gradients or covariance matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::el::sample_expectile;
use crate::garch_sim::GarchParams;
use crate::linalg;
use crate::{stats, Error, Result};

pub const DEFAULT_M: usize = 13;
pub const DEFAULT_K: usize = 19;
/// Standardized gradient norm regarded as exact stationarity.
const POLISH_GRAD: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveConfig {
    /// Truncation lag. `m = 0` fits an intercept-only scale (used in tests).
    pub m: usize,
    pub tau_grid: Vec<f64>,
}

impl SieveConfig {
    pub fn new(m: usize, tau_grid: Vec<f64>) -> Result<Self> {
        if tau_grid.is_empty() {
            return Err(Error::Domain("tau grid is empty".into()));
        }
        if let Some(t) = tau_grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Domain(format!("tau grid value {t} outside (0, 1)")));
        }
        if tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("tau grid must be strictly increasing".into()));
        }
        Ok(SieveConfig { m, tau_grid })
    }

    /// `τ_k = k / (K + 1)`, `k = 1..K`.
    pub fn uniform(m: usize, k: usize) -> Result<Self> {
        let grid = (1..=k).map(|i| i as f64 / (k + 1) as f64).collect();
        Self::new(m, grid)
    }

    pub fn k(&self) -> usize {
        self.tau_grid.len()
    }

    /// Number of free parameters `K + m`.
    pub fn n_free(&self) -> usize {
        self.k() + self.m
    }
}

impl Default for SieveConfig {
    fn default() -> Self {
        Self::uniform(DEFAULT_M, DEFAULT_K).expect("default grid is valid")
    }
}

/// Rows `x_t = (1, |Y_{t-1}|, ..., |Y_{t-m}|)` for `t = m..n-1` (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub m: usize,
    rows: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.m + 1
    }

    /// Row for date `t = m + r`.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Lagged absolute returns without the leading one.
    fn lags(&self, r: usize) -> &[f64] {
        &self.row(r)[1..]
    }
}

pub fn build_design(returns: &[f64], m: usize) -> Result<Design> {
    let n = returns.len();
    if n <= m {
        return Err(Error::InsufficientData { needed: m, got: n });
    }
    let rows = n - m;
    let mut data = Vec::with_capacity(rows * (m + 1));
    for t in m..n {
        data.push(1.0);
        for i in 1..=m {
            data.push(returns[t - i].abs());
        }
    }
    Ok(Design { m, rows, data })
}

/// `ρ_τ(r) = |τ - I(r < 0)| r²`.
pub fn asymmetric_square_loss(r: f64, tau: f64) -> f64 {
    if r >= 0.0 {
        tau * r * r
    } else {
        (1.0 - tau) * r * r
    }
}

/// Weight `|τ - I(v ≤ 0)|`; the kink `v = 0` takes the `1 - τ` side.
#[inline]
fn weight(v: f64, tau: f64) -> f64 {
    if v <= 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// `ηᵀx_t` for any `t ≥ m`, including the out-of-sample date `t = returns.len()`.
pub fn sieve_sigma(eta: &[f64], returns: &[f64], t: usize) -> f64 {
    let m = eta.len() - 1;
    debug_assert!(t >= m && t <= returns.len());
    eta[0] + (1..=m).map(|i| eta[i] * returns[t - i].abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative parameter change threshold.
    pub param_tol: f64,
    /// Threshold on the per-row gradient norm in standardized units.
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            param_tol: 1e-8,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveFit {
    pub tau_grid: Vec<f64>,
    /// `(a₀, a₁, ..., a_m)` with `a₀ = 1`.
    pub eta: Vec<f64>,
    /// `(u_1..u_K, a₀..a_m)`.
    pub theta: Vec<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective after every iteration, starting with the initial value.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl SieveFit {
    pub fn m(&self) -> usize {
        self.eta.len() - 1
    }

    pub fn k(&self) -> usize {
        self.tau_grid.len()
    }

    /// Innovation expectiles `(u_1..u_K)`.
    pub fn expectiles(&self) -> &[f64] {
        &self.theta[..self.k()]
    }

    /// Free parameters `(u_1..u_K, a_1..a_m)`.
    pub fn free_params(&self) -> Vec<f64> {
        let mut v = self.expectiles().to_vec();
        v.extend_from_slice(&self.eta[1..]);
        v
    }
}

/// Response and design for one CALS problem.
struct Problem<'a> {
    y: &'a [f64],
    design: Design,
    taus: &'a [f64],
    /// Data scale used to standardize the convergence test.
    scale: f64,
}

impl<'a> Problem<'a> {
    fn new(returns: &'a [f64], config: &'a SieveConfig) -> Result<Self> {
        let design = build_design(returns, config.m)?;
        let y = &returns[config.m..];
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
        Ok(Problem {
            y,
            design,
            taus: &config.tau_grid,
            scale: if rms > 0.0 { rms } else { 1.0 },
        })
    }

    fn k(&self) -> usize {
        self.taus.len()
    }

    fn m(&self) -> usize {
        self.design.m
    }

    fn sigmas(&self, a: &[f64]) -> Vec<f64> {
        (0..self.design.rows())
            .map(|r| 1.0 + dot(self.design.lags(r), a))
            .collect()
    }

    fn objective(&self, u: &[f64], a: &[f64]) -> f64 {
        let s = self.sigmas(a);
        let mut total = 0.0;
        for (r, &st) in s.iter().enumerate() {
            let yt = self.y[r];
            for (k, &tau) in self.taus.iter().enumerate() {
                total += asymmetric_square_loss(yt - u[k] * st, tau);
            }
        }
        total
    }

    /// Gradient in free order.
    fn gradient(&self, u: &[f64], a: &[f64]) -> Vec<f64> {
        let (k_n, m) = (self.k(), self.m());
        let mut g = vec![0.0; k_n + m];
        let s = self.sigmas(a);
        for (r, &st) in s.iter().enumerate() {
            let yt = self.y[r];
            let lags = self.design.lags(r);
            let mut coef_a = 0.0;
            for (k, &tau) in self.taus.iter().enumerate() {
                let v = yt - u[k] * st;
                let wv = weight(v, tau) * v;
                g[k] -= 2.0 * wv * st;
                coef_a -= 2.0 * wv * u[k];
            }
            for (i, x) in lags.iter().enumerate() {
                g[k_n + i] += coef_a * x;
            }
        }
        g
    }

    /// Piecewise-exact Hessian in free order.
    fn hessian(&self, u: &[f64], a: &[f64]) -> DMatrix<f64> {
        let (k_n, m) = (self.k(), self.m());
        let dim = k_n + m;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let s = self.sigmas(a);
        for (r, &st) in s.iter().enumerate() {
            let yt = self.y[r];
            let lags = self.design.lags(r);
            let mut waa = 0.0;
            for (k, &tau) in self.taus.iter().enumerate() {
                let v = yt - u[k] * st;
                let w = weight(v, tau);
                h[(k, k)] += 2.0 * w * st * st;
                let cross = 2.0 * w * (2.0 * u[k] * st - yt);
                for (i, x) in lags.iter().enumerate() {
                    h[(k, k_n + i)] += cross * x;
                }
                waa += 2.0 * w * u[k] * u[k];
            }
            for i in 0..m {
                let xi = lags[i] * waa;
                for j in i..m {
                    h[(k_n + i, k_n + j)] += xi * lags[j];
                }
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                h[(j, i)] = h[(i, j)];
            }
        }
        h
    }

    fn standardized_grad_norm(&self, g: &[f64]) -> f64 {
        let k_n = self.k();
        let c = self.scale;
        let rows = self.design.rows() as f64;
        let ss: f64 = g
            .iter()
            .enumerate()
            .map(|(i, gi)| {
                let z = if i < k_n { gi / c } else { gi / (c * c * c) };
                z * z
            })
            .sum();
        ss.sqrt() / rows
    }

    /// Exact minimization over each `u_k` with `a` fixed (expectile
    /// regression through the origin on `s_t`).
    fn update_expectiles(&self, u: &mut [f64], a: &[f64]) {
        let s = self.sigmas(a);
        for (k, &tau) in self.taus.iter().enumerate() {
            u[k] = expectile_through_origin(self.y, &s, tau, u[k]);
        }
    }

    /// Minimization over `a` with `u` fixed by iteratively reweighted least squares.
    fn update_sieve(&self, u: &[f64], a: &mut Vec<f64>) {
        let m = self.m();
        if m == 0 {
            return;
        }
        let mut current = self.objective(u, a);
        for _ in 0..50 {
            let s = self.sigmas(a);
            let mut lhs = DMatrix::<f64>::zeros(m, m);
            let mut rhs = DVector::<f64>::zeros(m);
            for (r, &st) in s.iter().enumerate() {
                let yt = self.y[r];
                let lags = self.design.lags(r);
                let mut wa = 0.0;
                let mut wb = 0.0;
                for (k, &tau) in self.taus.iter().enumerate() {
                    let w = weight(yt - u[k] * st, tau);
                    wa += w * u[k] * u[k];
                    wb += w * u[k] * (yt - u[k]);
                }
                for i in 0..m {
                    rhs[i] += wb * lags[i];
                    for j in i..m {
                        lhs[(i, j)] += wa * lags[i] * lags[j];
                    }
                }
            }
            for i in 0..m {
                for j in (i + 1)..m {
                    lhs[(j, i)] = lhs[(i, j)];
                }
            }
            let Ok((sol, _)) = linalg::solve_symmetric(&lhs, &rhs) else {
                return;
            };
            let cand: Vec<f64> = sol.iter().copied().collect();
            let value = self.objective(u, &cand);
            if !(value < current) {
                return;
            }
            let change = max_abs_diff(&cand, a);
            *a = cand;
            current = value;
            if change <= 1e-14 * (1.0 + max_abs(a)) {
                return;
            }
        }
    }
}

/// Minimizer of `Σ_t ρ_τ(y_t - u s_t)` over scalar `u`. The derivative is
/// monotone, so Newton steps are safeguarded by a bracket.
fn expectile_through_origin(y: &[f64], s: &[f64], tau: f64, start: f64) -> f64 {
    let deriv = |u: f64| -> (f64, f64) {
        let mut d = 0.0;
        let mut dd = 0.0;
        for (yt, st) in y.iter().zip(s) {
            let v = yt - u * st;
            let w = weight(v, tau);
            d -= 2.0 * w * v * st;
            dd += 2.0 * w * st * st;
        }
        (d, dd)
    };
    let ratio_bounds = y
        .iter()
        .zip(s)
        .filter(|(_, st)| st.abs() > 0.0)
        .map(|(yt, st)| yt / st)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    let (mut lo, mut hi) = ratio_bounds;
    if !lo.is_finite() {
        return start;
    }
    // Signs of s_t may vary when the sieve goes negative; widen the bracket.
    let span = (hi - lo).abs().max(1e-12);
    lo -= span;
    hi += span;
    while deriv(lo).0 > 0.0 {
        lo -= 2.0 * (hi - lo);
    }
    while deriv(hi).0 < 0.0 {
        hi += 2.0 * (hi - lo);
    }
    let mut u = if start > lo && start < hi { start } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let (d, dd) = deriv(u);
        if d == 0.0 {
            return u;
        }
        if d > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let newton = u - d / dd;
        let next = if dd > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - u).abs() <= 1e-15 * (1.0 + u.abs()) || hi - lo <= 1e-15 * (1.0 + u.abs()) {
            return next;
        }
        u = next;
    }
    u
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn split_free(theta: &[f64], k: usize) -> (&[f64], &[f64]) {
    theta.split_at(k)
}

/// Composite objective at free parameters `(u_1..u_K, a_1..a_m)`.
pub fn cals_objective(theta: &[f64], returns: &[f64], config: &SieveConfig) -> Result<f64> {
    check_free_len(theta, config)?;
    let problem = Problem::new(returns, config)?;
    let (u, a) = split_free(theta, config.k());
    Ok(problem.objective(u, a))
}

/// Analytic gradient `Σ_t ψ(w_t, θ)` at free parameters.
pub fn cals_gradient(theta: &[f64], returns: &[f64], config: &SieveConfig) -> Result<Vec<f64>> {
    check_free_len(theta, config)?;
    let problem = Problem::new(returns, config)?;
    let (u, a) = split_free(theta, config.k());
    Ok(problem.gradient(u, a))
}

/// Per-observation scores `ψ(w_t, θ)` in free order, one row per date.
pub fn cals_scores(fit: &SieveFit, returns: &[f64], config: &SieveConfig) -> Result<Vec<Vec<f64>>> {
    let problem = Problem::new(returns, config)?;
    let (k_n, m) = (problem.k(), problem.m());
    let u = fit.expectiles();
    let a = &fit.eta[1..];
    let s = problem.sigmas(a);
    Ok(s.iter()
        .enumerate()
        .map(|(r, &st)| {
            let yt = problem.y[r];
            let lags = problem.design.lags(r);
            let mut g = vec![0.0; k_n + m];
            let mut coef_a = 0.0;
            for (k, &tau) in problem.taus.iter().enumerate() {
                let v = yt - u[k] * st;
                let wv = weight(v, tau) * v;
                g[k] = -2.0 * wv * st;
                coef_a -= 2.0 * wv * u[k];
            }
            for (i, x) in lags.iter().enumerate() {
                g[k_n + i] = coef_a * x;
            }
            g
        })
        .collect())
}

fn check_free_len(theta: &[f64], config: &SieveConfig) -> Result<()> {
    if theta.len() != config.n_free() {
        return Err(Error::Domain(format!(
            "expected {} free parameters, got {}",
            config.n_free(),
            theta.len()
        )));
    }
    Ok(())
}

pub fn fit_cals(returns: &[f64], config: &SieveConfig, init: Option<&SieveFit>) -> Result<SieveFit> {
    fit_cals_with(returns, config, init, &FitOptions::default())
}

pub fn fit_cals_with(
    returns: &[f64],
    config: &SieveConfig,
    init: Option<&SieveFit>,
    options: &FitOptions,
) -> Result<SieveFit> {
    let n = returns.len();
    if n <= config.m + 20 {
        return Err(Error::InsufficientData { needed: config.m + 20, got: n });
    }
    let problem = Problem::new(returns, config)?;
    let (k_n, m) = (problem.k(), problem.m());
    for i in 0..m {
        let col = (0..problem.design.rows()).map(|r| problem.design.lags(r)[i]);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi - lo <= 0.0 {
            return Err(Error::RankDeficient(format!(
                "lag-{} absolute-return column is constant",
                i + 1
            )));
        }
    }

    let (mut u, mut a) = match init {
        Some(f) if f.k() == k_n && f.m() == m => (f.expectiles().to_vec(), f.eta[1..].to_vec()),
        _ => initial_guess(&problem)?,
    };

    let mut f = problem.objective(&u, &a);
    let initial_objective = f;
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    let mut gnorm = f64::INFINITY;
    let mut newton_ok = false;
    let mut polish = 0;

    for iter in 1..=options.max_iter {
        iterations = iter;
        let old: Vec<f64> = u.iter().chain(a.iter()).copied().collect();

        let mut stepped = false;
        if iter > 3 || newton_ok {
            if let Some((nu, na, nf)) = newton_step(&problem, &u, &a, f) {
                u = nu;
                a = na;
                f = nf;
                stepped = true;
                newton_ok = true;
            } else {
                newton_ok = false;
            }
        }
        if !stepped {
            let mut cu = u.clone();
            let mut ca = a.clone();
            problem.update_expectiles(&mut cu, &ca);
            problem.update_sieve(&cu, &mut ca);
            let cf = problem.objective(&cu, &ca);
            if cf <= f {
                u = cu;
                a = ca;
                f = cf;
            }
        }
        trace.push(f);

        let new: Vec<f64> = u.iter().chain(a.iter()).copied().collect();
        let change = max_abs_diff(&new, &old) / (max_abs(&new) + 1e-300);
        gnorm = problem.standardized_grad_norm(&problem.gradient(&u, &a));
        if gnorm < POLISH_GRAD {
            converged = true;
            break;
        }
        if gnorm < options.grad_tol && change < options.param_tol {
            // A few extra Newton steps take the fit to rounding level, which
            // keeps the result independent of the data scale.
            polish += 1;
            if polish > 3 {
                converged = true;
                break;
            }
        }
        if change == 0.0 && !stepped {
            // Neither block update nor Newton can move; report the stationarity status.
            converged = gnorm < options.grad_tol;
            break;
        }
    }

    let mut eta = Vec::with_capacity(m + 1);
    eta.push(1.0);
    eta.extend_from_slice(&a);
    let mut theta = u.clone();
    theta.extend_from_slice(&eta);
    Ok(SieveFit {
        tau_grid: config.tau_grid.clone(),
        eta,
        theta,
        objective: f,
        initial_objective,
        converged,
        iterations,
        gradient_norm: gnorm,
        trace,
    })
}

/// Damped Newton step with Armijo backtracking. Returns `None` when no
/// decrease is found.
fn newton_step(problem: &Problem, u: &[f64], a: &[f64], f: f64) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let k_n = problem.k();
    let g = problem.gradient(u, a);
    let gvec = DVector::from_vec(g);
    let h = problem.hessian(u, a);
    let dim = h.nrows();
    let trace = (0..dim).map(|i| h[(i, i)].abs()).sum::<f64>() / dim as f64;
    let mut damping = 0.0;
    let dir = loop {
        let mut hd = h.clone();
        for i in 0..dim {
            hd[(i, i)] += damping;
        }
        if let Some(chol) = hd.cholesky() {
            break -chol.solve(&gvec);
        }
        damping = if damping == 0.0 { 1e-10 * trace.max(1e-300) } else { damping * 10.0 };
        if damping > 1e10 * trace.max(1.0) {
            return None;
        }
    };
    let slope = gvec.dot(&dir);
    if !(slope < 0.0) {
        return None;
    }
    // Below rounding of f the Armijo test is meaningless; the full step of a
    // piecewise quadratic is accepted unless it is visibly worse.
    if -slope < 1e-12 * (1.0 + f.abs()) {
        let cand: Vec<f64> = u.iter().chain(a.iter()).zip(dir.iter()).map(|(p, d)| p + d).collect();
        let (cu, ca) = cand.split_at(k_n);
        let cf = problem.objective(cu, ca);
        return (cf <= f + 1e-14 * f.abs()).then(|| (cu.to_vec(), ca.to_vec(), cf.min(f)));
    }
    let mut step = 1.0;
    for _ in 0..40 {
        let cand: Vec<f64> = u
            .iter()
            .chain(a.iter())
            .zip(dir.iter())
            .map(|(p, d)| p + step * d)
            .collect();
        let (cu, ca) = cand.split_at(k_n);
        let cf = problem.objective(cu, ca);
        if cf <= f + 1e-4 * step * slope {
            return Some((cu.to_vec(), ca.to_vec(), cf));
        }
        step *= 0.5;
    }
    None
}

/// Least-squares start: regress `|Y_t|` on `x_t`, rescale to `a₀ = 1`, then
/// take sample expectiles of `Y_t / s_t`.
fn initial_guess(problem: &Problem) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = problem.design.rows();
    let m = problem.m();
    let mut a = vec![0.0; m];
    if m > 0 {
        let x = DMatrix::from_fn(rows, m + 1, |r, c| problem.design.row(r)[c]);
        let y = DVector::from_iterator(rows, problem.y.iter().map(|v| v.abs()));
        if let Ok(b) = linalg::ols(&x, &y) {
            if b[0] > 0.0 {
                let cand: Vec<f64> = b.iter().skip(1).map(|v| v / b[0]).collect();
                if problem.sigmas(&cand).iter().all(|s| *s > 0.0) {
                    a = cand;
                }
            }
        }
    }
    let s = problem.sigmas(&a);
    let ratio: Vec<f64> = problem.y.iter().zip(&s).map(|(y, s)| y / s).collect();
    let u = problem
        .taus
        .iter()
        .map(|&tau| sample_expectile(&ratio, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok((u, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolatilityKind {
    Preliminary,
    Refined,
}

/// Volatility estimates for dates `start..start + values.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityPath {
    pub kind: VolatilityKind,
    pub start: usize,
    pub values: Vec<f64>,
    /// Lower clamp applied to every value.
    pub floor: f64,
}

impl VolatilityPath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> usize {
        self.start + self.values.len()
    }

    pub fn at(&self, t: usize) -> f64 {
        self.values[t - self.start]
    }
}

/// Relative clamp for volatility estimates. Sieve volatilities are
/// dimensionless (`a₀ = 1`), so the floor is relative to their mean size.
pub const VOL_FLOOR_REL: f64 = 1e-8;

pub fn preliminary_volatility(fit: &SieveFit, returns: &[f64]) -> VolatilityPath {
    let m = fit.m();
    let raw: Vec<f64> = (m..returns.len()).map(|t| sieve_sigma(&fit.eta, returns, t)).collect();
    let floor = VOL_FLOOR_REL * stats::mean(&raw.iter().map(|v| v.abs()).collect::<Vec<_>>()).max(f64::MIN_POSITIVE);
    VolatilityPath {
        kind: VolatilityKind::Preliminary,
        start: m,
        values: raw.into_iter().map(|v| v.max(floor)).collect(),
        floor,
    }
}

/// Least-squares GARCH refit on the preliminary volatility path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchRefit {
    /// `(β₀, γ₁..γ_q, β₁..β_p)`.
    pub phi: Vec<f64>,
    pub p: usize,
    pub q: usize,
    pub refined: VolatilityPath,
}

impl GarchRefit {
    pub fn params(&self) -> GarchParams {
        GarchParams::from_phi(&self.phi, self.p, self.q)
    }

    /// First date with all lags available.
    pub fn first_date(&self) -> usize {
        self.refined.start
    }

    /// `σ̂_t = φᵀz_t` given a preliminary-volatility lookup for `t - 1..t - p`.
    pub fn sigma_at(&self, returns: &[f64], prelim: impl Fn(usize) -> f64, t: usize) -> f64 {
        let mut s = self.phi[0];
        for j in 1..=self.q {
            s += self.phi[j] * returns[t - j].abs();
        }
        for i in 1..=self.p {
            s += self.phi[self.q + i] * prelim(t - i);
        }
        s
    }
}

/// Regressor `z_t = (1, |Y_{t-1}|..|Y_{t-q}|, σ̃_{t-1}..σ̃_{t-p})`.
pub fn refit_regressor(prelim: &VolatilityPath, returns: &[f64], p: usize, q: usize, t: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(1 + p + q);
    z.push(1.0);
    for j in 1..=q {
        z.push(returns[t - j].abs());
    }
    for i in 1..=p {
        z.push(prelim.at(t - i));
    }
    z
}

pub fn refit_garch(prelim: &VolatilityPath, returns: &[f64], p: usize, q: usize) -> Result<GarchRefit> {
    if prelim.len() <= p + q + 20 {
        return Err(Error::InsufficientData { needed: p + q + 20, got: prelim.len() });
    }
    let first = (prelim.start + p).max(q);
    let end = prelim.end();
    let rows = end - first;
    let cols = 1 + p + q;
    let x = DMatrix::from_fn(rows, cols, |r, c| refit_regressor(prelim, returns, p, q, first + r)[c]);
    let y = DVector::from_iterator(rows, (first..end).map(|t| prelim.at(t)));
    let phi: Vec<f64> = linalg::ols(&x, &y)?.iter().copied().collect();
    let values = (0..rows)
        .map(|r| {
            let fitted: f64 = x.row(r).iter().zip(&phi).map(|(a, b)| a * b).sum();
            fitted.max(prelim.floor)
        })
        .collect();
    Ok(GarchRefit {
        phi,
        p,
        q,
        refined: VolatilityPath {
            kind: VolatilityKind::Refined,
            start: first,
            values,
            floor: prelim.floor,
        },
    })
}
