//! Maximum empirical likelihood estimation of `(μ, τ)` for a fixed quantile level.
//!
//! Given standardized residuals, the pair solves the estimating equations
//! `E[(ε - μ)I(ε < μ) + c(ε - μ)] = 0` and `E[I(ε < μ) - α] = 0` with
//! `c = τ / (1 - 2τ)`, so that `μ` is simultaneously the α-quantile and the
//! τ-expectile. Also hosts the grid-search baseline and the sample expectile.

use serde::{Deserialize, Serialize};

use crate::{stats, Error, Result};

pub const DEFAULT_MIN_N: usize = 30;
pub const DEFAULT_TAU_MIN: f64 = 1e-5;
pub const DEFAULT_TAU_DELTA: f64 = 1e-4;
/// Half log-EL values closer than this (relative) are treated as equal.
const TIE_TOL: f64 = 1e-9;

fn c_factor(tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau = {tau} outside (0, 1)")));
    }
    if tau == 0.5 {
        return Err(Error::Singular("tau = 0.5 makes tau / (1 - 2 tau) undefined".into()));
    }
    Ok(tau / (1.0 - 2.0 * tau))
}

/// Rows `W_i = (W_{i1}, W_{i2})`.
pub fn estimating_functions(residuals: &[f64], mu: f64, tau: f64, alpha: f64) -> Result<Vec<[f64; 2]>> {
    let c = c_factor(tau)?;
    Ok(residuals
        .iter()
        .map(|&e| {
            let d = e - mu;
            let ind = if e < mu { 1.0 } else { 0.0 };
            [d * ind + c * d, ind - alpha]
        })
        .collect())
}

/// Whether the origin lies strictly inside the convex hull of the rows.
pub fn convex_hull_contains_origin(rows: &[[f64; 2]]) -> bool {
    let mut angles: Vec<f64> = rows
        .iter()
        .filter(|w| w[0] != 0.0 || w[1] != 0.0)
        .map(|w| w[1].atan2(w[0]))
        .collect();
    if angles.len() < 3 {
        return false;
    }
    angles.sort_by(f64::total_cmp);
    let wrap = angles[0] + 2.0 * std::f64::consts::PI - angles[angles.len() - 1];
    let max_gap = angles.windows(2).map(|w| w[1] - w[0]).fold(wrap, f64::max);
    max_gap < std::f64::consts::PI - 1e-12
}

#[derive(Debug, Clone, Copy)]
struct Dual {
    lambda: [f64; 2],
    /// `Σ log(1 + λᵀW_i)`.
    log_sum: f64,
}

/// Owen's pseudo-logarithm: `log z` above `eps`, quadratic continuation below.
#[inline]
fn log_star(z: f64, eps: f64) -> (f64, f64, f64) {
    if z >= eps {
        (z.ln(), 1.0 / z, -1.0 / (z * z))
    } else {
        let r = z / eps;
        (eps.ln() - 1.5 + 2.0 * r - 0.5 * r * r, (2.0 - r) / eps, -1.0 / (eps * eps))
    }
}

/// Damped Newton on the convex dual `-Σ log*(1 + λᵀW_i)`.
fn dual_solve(w1: &[f64], w2: &[f64], start: [f64; 2]) -> Result<Dual> {
    let n = w1.len();
    let eps = 1.0 / n as f64;
    let objective = |l: [f64; 2]| -> f64 {
        -w1.iter()
            .zip(w2)
            .map(|(a, b)| log_star(1.0 + l[0] * a + l[1] * b, eps).0)
            .sum::<f64>()
    };
    let mut lambda = start;
    let mut f = objective(lambda);
    if !f.is_finite() {
        lambda = [0.0, 0.0];
        f = objective(lambda);
    }
    let mut converged = false;
    for _ in 0..200 {
        let (mut g0, mut g1) = (0.0, 0.0);
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
        for (a, b) in w1.iter().zip(w2) {
            let (_, d1, d2) = log_star(1.0 + lambda[0] * a + lambda[1] * b, eps);
            g0 -= d1 * a;
            g1 -= d1 * b;
            h00 -= d2 * a * a;
            h01 -= d2 * a * b;
            h11 -= d2 * b * b;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 1e-300) || !det.is_finite() {
            return Err(Error::Singular("empirical likelihood dual Hessian is singular".into()));
        }
        let d0 = -(h11 * g0 - h01 * g1) / det;
        let d1 = -(h00 * g1 - h01 * g0) / det;
        let dec2 = -(g0 * d0 + g1 * d1);
        // Inside the quadratic-convergence region a full step finishes the job.
        if dec2 < 1e-12 * (1.0 + f.abs()) {
            lambda = [lambda[0] + d0, lambda[1] + d1];
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = [lambda[0] + t * d0, lambda[1] + t * d1];
            let fc = objective(cand);
            if fc <= f - 0.25 * t * dec2 {
                lambda = cand;
                f = fc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if !converged {
        return Err(Error::EstimationFailure("empirical likelihood dual did not converge".into()));
    }
    let mut log_sum = 0.0;
    for (a, b) in w1.iter().zip(w2) {
        let z = 1.0 + lambda[0] * a + lambda[1] * b;
        if !(z >= eps * (1.0 - 1e-8)) {
            return Err(Error::Infeasible("dual solution leaves the feasible region".into()));
        }
        log_sum += z.ln();
    }
    Ok(Dual { lambda, log_sum })
}

fn split_rows(rows: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    rows.iter().map(|w| (w[0], w[1])).unzip()
}

/// Lagrange multiplier solving `Σ W_i / (1 + λᵀW_i) = 0`.
pub fn solve_lambda(rows: &[[f64; 2]]) -> Result<[f64; 2]> {
    if rows.is_empty() {
        return Err(Error::InsufficientData { needed: 0, got: 0 });
    }
    let n = rows.len() as f64;
    let mean = [rows.iter().map(|w| w[0]).sum::<f64>() / n, rows.iter().map(|w| w[1]).sum::<f64>() / n];
    let scale = rows.iter().fold(0.0f64, |m, w| m.max(w[0].abs()).max(w[1].abs()));
    if mean[0].abs() <= 1e-15 * scale && mean[1].abs() <= 1e-15 * scale {
        return Ok([0.0, 0.0]);
    }
    if !convex_hull_contains_origin(rows) {
        return Err(Error::Infeasible("zero is not inside the convex hull of the estimating functions".into()));
    }
    let (w1, w2) = split_rows(rows);
    Ok(dual_solve(&w1, &w2, [0.0, 0.0])?.lambda)
}

/// `l(μ, τ) = 2 Σ log(1 + λᵀW_i)`.
pub fn neg_log_el(residuals: &[f64], mu: f64, tau: f64, alpha: f64) -> Result<f64> {
    let rows = estimating_functions(residuals, mu, tau, alpha)?;
    let lambda = solve_lambda(&rows)?;
    Ok(2.0 * rows.iter().map(|w| (1.0 + lambda[0] * w[0] + lambda[1] * w[1]).ln()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElProblem {
    /// Residuals in lower-tail orientation, sorted ascending.
    sorted: Vec<f64>,
    /// Lower-tail level in `(0, 0.5)`.
    alpha: f64,
    /// Whether the request was an upper-tail level that has been reflected.
    reflected: bool,
}

impl ElProblem {
    pub fn new(residuals: &[f64], alpha: f64) -> Result<Self> {
        Self::with_min_n(residuals, alpha, DEFAULT_MIN_N)
    }

    pub fn with_min_n(residuals: &[f64], alpha: f64, min_n: usize) -> Result<Self> {
        if residuals.len() < min_n {
            return Err(Error::InsufficientData { needed: min_n, got: residuals.len() });
        }
        if residuals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("residuals must be finite".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) || alpha == 0.5 {
            return Err(Error::Domain(format!("alpha = {alpha} must lie in (0, 1) and differ from 0.5")));
        }
        let reflected = alpha > 0.5;
        let mut sorted: Vec<f64> = if reflected {
            residuals.iter().map(|v| -v).collect()
        } else {
            residuals.to_vec()
        };
        sorted.sort_by(f64::total_cmp);
        Ok(ElProblem {
            sorted,
            alpha: if reflected { 1.0 - alpha } else { alpha },
            reflected,
        })
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn lower_alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_reflected(&self) -> bool {
        self.reflected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElSolution {
    /// Estimated quantile, reported in the orientation of the request.
    pub mu: f64,
    /// Expectile level of the lower-tail problem, in `(0, 0.5)`.
    pub tau: f64,
    pub lambda: [f64; 2],
    pub logel: f64,
    pub feasible: bool,
    pub boundary_flag: bool,
    #[serde(default)]
    pub reflected: bool,
}

impl ElSolution {
    /// Expectile level in the orientation of the request (`1 - τ` when reflected).
    pub fn oriented_tau(&self) -> f64 {
        if self.reflected {
            1.0 - self.tau
        } else {
            self.tau
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ElSearch {
    pub tau_min: f64,
    pub tau_max: f64,
    /// Half-width of the candidate rank window in units of `√N`.
    pub rank_width: f64,
    /// Relative tolerance of the golden-section search in `log τ`.
    pub tau_tol: f64,
}

impl Default for ElSearch {
    fn default() -> Self {
        ElSearch {
            tau_min: DEFAULT_TAU_MIN,
            tau_max: 0.5 - DEFAULT_TAU_DELTA,
            rank_width: 4.0,
            tau_tol: 1e-9,
        }
    }
}

/// One probed point of the profile search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub mu: f64,
    pub tau: f64,
    pub logel: f64,
}

pub fn max_el_estimate(problem: &ElProblem) -> Result<ElSolution> {
    Ok(max_el_estimate_with(problem, &ElSearch::default(), false)?.0)
}

/// Exact lower bound on `l(μ, ·)` from the indicator constraint alone.
fn binomial_bound(k: usize, n: usize, alpha: f64) -> f64 {
    let (kf, nf) = (k as f64, n as f64);
    let term = |a: f64, b: f64| if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    2.0 * (term(kf, nf * alpha) + term(nf - kf, nf * (1.0 - alpha)))
}

/// Profile search over candidate `μ`, returning the solution and, on request,
/// every probed `(μ, τ, l)`.
pub fn max_el_estimate_with(problem: &ElProblem, search: &ElSearch, record: bool) -> Result<(ElSolution, Vec<Probe>)> {
    let x = &problem.sorted;
    let n = x.len();
    let nf = n as f64;
    let alpha = problem.alpha;
    let half = search.rank_width * nf.sqrt();
    let lo_rank = ((nf * alpha - half).ceil().max(1.0)) as usize;
    let hi_rank = ((nf * alpha + half).floor().min(nf)) as usize;

    let mut candidates: Vec<f64> = Vec::new();
    for r in lo_rank..=hi_rank.max(lo_rank) {
        candidates.push(x[r - 1]);
        if r < n {
            candidates.push(0.5 * (x[r - 1] + x[r]));
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut scored: Vec<(f64, usize, f64)> = candidates
        .into_iter()
        .filter_map(|mu| {
            let k = x.partition_point(|v| *v < mu);
            (k > 0 && k < n).then(|| (binomial_bound(k, n, alpha), k, mu))
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.total_cmp(&b.2)));

    let prefix = prefix_sums(x);
    let mut best: Option<(f64, f64, Dual)> = None;
    let mut probes = Vec::new();
    let mut evaluated = 0usize;
    for (bound, k, mu) in scored {
        if let Some((_, _, b)) = &best {
            if bound > 2.0 * (b.log_sum + TIE_TOL * (1.0 + b.log_sum.abs())) {
                break;
            }
        }
        evaluated += 1;
        let Some((tau, dual)) = profile_tau(x, &prefix, k, mu, alpha, search, record.then_some(&mut probes)) else {
            continue;
        };
        // The profile is flat across an order-statistic gap, so near-equal
        // values are ties and fall to the smallest μ, then the smallest τ.
        let better = match &best {
            None => true,
            Some((bm, bt, bd)) => {
                let (l, bl) = (dual.log_sum, bd.log_sum);
                let tol = TIE_TOL * (1.0 + bl.abs());
                l < bl - tol || ((l - bl).abs() <= tol && (mu < *bm || (mu == *bm && tau < *bt)))
            }
        };
        if better {
            best = Some((mu, tau, dual));
        }
    }
    let Some((mu, tau, dual)) = best else {
        return Err(Error::EstimationFailure(format!(
            "all {evaluated} candidate quantiles are infeasible (n = {n}, alpha = {alpha})"
        )));
    };
    let boundary_flag = tau <= search.tau_min * (1.0 + 1e-6) || tau >= search.tau_max - 1e-9;
    let sol = ElSolution {
        mu: if problem.reflected { -mu } else { mu },
        tau,
        lambda: dual.lambda,
        logel: (2.0 * dual.log_sum).max(0.0),
        feasible: true,
        boundary_flag,
        reflected: problem.reflected,
    };
    Ok((sol, probes))
}

fn prefix_sums(x: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(x.len() + 1);
    p.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        p.push(acc);
    }
    p
}

/// For fixed `μ` (with `k` residuals below it), minimizes `l(μ, τ)` over `τ`.
/// `l` is quasiconvex in `τ` on the feasible interval, which is computed in
/// closed form from the two-valued indicator column.
fn profile_tau(
    x: &[f64],
    prefix: &[f64],
    k: usize,
    mu: f64,
    alpha: f64,
    search: &ElSearch,
    mut probes: Option<&mut Vec<Probe>>,
) -> Option<(f64, Dual)> {
    let n = x.len();
    let d: Vec<f64> = x.iter().map(|v| v - mu).collect();
    let w2: Vec<f64> = (0..n).map(|i| if i < k { 1.0 - alpha } else { -alpha }).collect();

    // Cross-section of the hull at W2 = 0 is [a0 + a1 c, b0 + b1 c].
    let (dl_min, dl_max) = (d[0], d[k - 1]);
    let (du_min, du_max) = (d[k], d[n - 1]);
    let (a0, a1) = (alpha * dl_min, alpha * dl_min + (1.0 - alpha) * du_min);
    let (b0, b1) = (alpha * dl_max, alpha * dl_max + (1.0 - alpha) * du_max);
    let to_c = |t: f64| t / (1.0 - 2.0 * t);
    let to_tau = |c: f64| c / (1.0 + 2.0 * c);
    let mut c_lo = to_c(search.tau_min);
    let mut c_hi = to_c(search.tau_max);
    // a0 + a1 c < 0 and b0 + b1 c > 0.
    if a1 > 0.0 {
        c_hi = c_hi.min(-a0 / a1);
    } else if a1 == 0.0 && a0 >= 0.0 {
        return None;
    }
    if b1 > 0.0 {
        c_lo = c_lo.max(-b0 / b1);
    } else if b1 < 0.0 {
        c_hi = c_hi.min(-b0 / b1);
    } else if b0 <= 0.0 {
        return None;
    }
    let clamp_lo = c_lo > to_c(search.tau_min);
    let clamp_hi = c_hi < to_c(search.tau_max);
    if !(c_hi > c_lo) {
        return None;
    }
    // Stay strictly inside where the bound is a hull face rather than a search limit.
    let shrink = 1e-10 * (c_hi - c_lo);
    let t_lo = to_tau(if clamp_lo { c_lo + shrink } else { c_lo });
    let t_hi = to_tau(if clamp_hi { c_hi - shrink } else { c_hi });
    if !(t_hi > t_lo) {
        return None;
    }

    let mut w1 = vec![0.0; n];
    let mut warm = [0.0, 0.0];
    let mut eval = |tau: f64, probes: &mut Option<&mut Vec<Probe>>| -> f64 {
        let c = to_c(tau);
        for i in 0..n {
            w1[i] = if i < k { d[i] * (1.0 + c) } else { d[i] * c };
        }
        match dual_solve(&w1, &w2, warm) {
            Ok(dual) => {
                warm = dual.lambda;
                if let Some(p) = probes.as_deref_mut() {
                    p.push(Probe { mu, tau, logel: 2.0 * dual.log_sum });
                }
                dual.log_sum
            }
            Err(_) => f64::INFINITY,
        }
    };

    // Coarse log grid plus the moment-matching level, then golden section.
    let s_below = mu * k as f64 - prefix[k];
    let s_above = (prefix[n] - prefix[k]) - mu * (n - k) as f64;
    let mut grid: Vec<f64> = (0..8)
        .map(|j| (t_lo.ln() + (t_hi.ln() - t_lo.ln()) * j as f64 / 7.0).exp())
        .collect();
    if s_below + s_above > 0.0 {
        let star = s_below / (s_below + s_above);
        if star > t_lo && star < t_hi {
            grid.push(star);
        }
    }
    grid.sort_by(f64::total_cmp);
    let values: Vec<f64> = grid.iter().map(|&t| eval(t, &mut probes)).collect();
    let (ib, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    if !values[ib].is_finite() {
        return None;
    }
    let mut lo = grid[ib.saturating_sub(1)].ln();
    let mut hi = grid[(ib + 1).min(grid.len() - 1)].ln();
    let mut best = (grid[ib], values[ib]);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut p1 = hi - ratio * (hi - lo);
    let mut p2 = lo + ratio * (hi - lo);
    let mut f1 = eval(p1.exp(), &mut probes);
    let mut f2 = eval(p2.exp(), &mut probes);
    while hi - lo > search.tau_tol {
        if f1 <= f2 {
            hi = p2;
            p2 = p1;
            f2 = f1;
            p1 = hi - ratio * (hi - lo);
            f1 = eval(p1.exp(), &mut probes);
        } else {
            lo = p1;
            p1 = p2;
            f1 = f2;
            p2 = lo + ratio * (hi - lo);
            f2 = eval(p2.exp(), &mut probes);
        }
        for (p, f) in [(p1, f1), (p2, f2)] {
            if f < best.1 || (f == best.1 && p.exp() < best.0) {
                best = (p.exp(), f);
            }
        }
    }
    let tau = best.0;
    let c = to_c(tau);
    for i in 0..n {
        w1[i] = if i < k { d[i] * (1.0 + c) } else { d[i] * c };
    }
    let dual = dual_solve(&w1, &w2, warm).ok()?;
    Some((tau, dual))
}

/// Sample τ-expectile: the unique root of `τ Σ(x_i - μ)⁺ = (1 - τ) Σ(μ - x_i)⁺`.
pub fn sample_expectile(data: &[f64], tau: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData { needed: 0, got: 0 });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau = {tau} outside (0, 1)")));
    }
    if tau == 0.5 {
        return Ok(stats::mean(data));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_expectile(&sorted, &prefix_sums(&sorted), tau))
}

/// Expectile on presorted data with prefix sums. The first-order condition is
/// piecewise linear between order statistics, so the root is exact.
fn sorted_expectile(x: &[f64], prefix: &[f64], tau: f64) -> f64 {
    let n = x.len();
    let total = prefix[n];
    // foc(i) at μ = x[i], decreasing in i.
    let foc = |i: usize| -> f64 {
        let mu = x[i];
        let below = x.partition_point(|v| *v < mu);
        let above = x.partition_point(|v| *v <= mu);
        let s_above = (total - prefix[above]) - mu * (n - above) as f64;
        let s_below = mu * below as f64 - prefix[below];
        tau * s_above - (1.0 - tau) * s_below
    };
    if x[0] == x[n - 1] {
        return x[0];
    }
    // Largest i with foc(i) >= 0.
    let (mut lo, mut hi) = (0usize, n - 1);
    if foc(hi) >= 0.0 {
        return x[hi];
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if foc(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if foc(lo) == 0.0 {
        return x[lo];
    }
    // Root in (x[lo], x[hi]); exactly lo + 1 points lie below.
    let j = lo + 1;
    let s_below = prefix[j];
    let s_above = total - prefix[j];
    let mu = (tau * s_above + (1.0 - tau) * s_below) / (tau * (n - j) as f64 + (1.0 - tau) * j as f64);
    mu.clamp(x[lo], x[hi])
}

/// Grid-search baseline: the grid level whose sample expectile is closest to
/// the sample α-quantile; ties go to the smaller level.
pub fn grid_search_tau(residuals: &[f64], alpha: f64, step: f64) -> Result<f64> {
    if !(step > 0.0 && step <= 0.01) {
        return Err(Error::Domain(format!("grid step {step} outside (0, 0.01]")));
    }
    if residuals.is_empty() {
        return Err(Error::InsufficientData { needed: 0, got: 0 });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    let mut x = residuals.to_vec();
    x.sort_by(f64::total_cmp);
    let prefix = prefix_sums(&x);
    let q = stats::sorted_quantile(&x, alpha);
    let last = ((1.0 - 1e-12) / step).floor() as usize;
    let level = |j: usize| j as f64 * step;
    let below = x.partition_point(|v| *v < q);
    let s_below = q * below as f64 - prefix[below];
    let s_above = (prefix[x.len()] - prefix[below]) - q * (x.len() - below) as f64;
    if s_below + s_above <= 0.0 {
        return Ok(level(1));
    }
    // The expectile is increasing in τ and hits q exactly at `star`.
    let star = s_below / (s_below + s_above);
    let j_lo = ((star / step).floor() as usize).clamp(1, last);
    let j_hi = (j_lo + 1).min(last);
    let dist = |j: usize| (sorted_expectile(&x, &prefix, level(j)) - q).abs();
    let mut best = (j_lo, dist(j_lo));
    for j in [j_lo.saturating_sub(1).max(1), j_hi] {
        let dj = dist(j);
        if dj < best.1 || (dj == best.1 && j < best.0) {
            best = (j, dj);
        }
    }
    Ok(level(best.0))
}
