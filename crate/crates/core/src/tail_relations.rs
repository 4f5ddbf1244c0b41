//! Closed-form bridges between quantiles, expectiles and expected shortfall.
//!
//! For a mean-zero law with partial moment `G(q) = ∫_{-∞}^q t dF(t)`, the
//! expectile level whose expectile equals the `alpha`-quantile is
//!
//! ```text
//! tau = (-alpha Q + G(Q)) / (2 G(Q) + (1 - 2 alpha) Q),     Q = Q_alpha
//! ```
//!
//! and the shortfall below an expectile is a fixed multiple of the expectile.

use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};

use crate::stats;
use crate::{Error, Result};

/// A univariate law exposing what the tail bridges need.
pub trait TailDistribution: Send + Sync {
    fn quantile(&self, p: f64) -> f64;
    /// `G(q) = ∫_{-∞}^q t dF(t)`.
    fn partial_moment(&self, q: f64) -> f64;
    fn cdf(&self, x: f64) -> f64;
    fn pdf(&self, x: f64) -> f64;
    fn mean(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StandardNormal;

impl TailDistribution for StandardNormal {
    fn quantile(&self, p: f64) -> f64 {
        stats::normal_quantile(p)
    }
    fn partial_moment(&self, q: f64) -> f64 {
        -stats::normal_pdf(q)
    }
    fn cdf(&self, x: f64) -> f64 {
        stats::normal_cdf(x)
    }
    fn pdf(&self, x: f64) -> f64 {
        stats::normal_pdf(x)
    }
    fn mean(&self) -> f64 {
        0.0
    }
}

/// Student-t with `nu` degrees of freedom multiplied by `scale`.
#[derive(Debug, Clone)]
pub struct ScaledStudentT {
    nu: f64,
    scale: f64,
    base: StudentsT,
}

impl ScaledStudentT {
    pub fn new(nu: f64, scale: f64) -> Result<Self> {
        if !(nu > 1.0) || !(scale > 0.0) {
            return Err(Error::Domain(format!(
                "scaled Student-t needs nu > 1 and scale > 0 (got nu={nu}, scale={scale})"
            )));
        }
        let base = StudentsT::new(0.0, 1.0, nu)
            .map_err(|e| Error::Domain(format!("Student-t: {e}")))?;
        Ok(ScaledStudentT { nu, scale, base })
    }

    /// Plain (unit-scale) Student-t.
    pub fn standard(nu: f64) -> Result<Self> {
        Self::new(nu, 1.0)
    }

    /// Student-t rescaled to unit variance, `scale = sqrt((nu - 2) / nu)`.
    pub fn unit_variance(nu: f64) -> Result<Self> {
        if !(nu > 2.0) {
            return Err(Error::Domain(format!(
                "unit-variance Student-t needs nu > 2 (got {nu})"
            )));
        }
        Self::new(nu, ((nu - 2.0) / nu).sqrt())
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `E|X|` in closed form.
    pub fn mean_abs(&self) -> f64 {
        let nu = self.nu;
        let ln = statrs::function::gamma::ln_gamma;
        self.scale * 2.0 * nu.sqrt() * (ln((nu + 1.0) / 2.0) - ln(nu / 2.0)).exp()
            / (std::f64::consts::PI.sqrt() * (nu - 1.0))
    }
}

impl TailDistribution for ScaledStudentT {
    fn quantile(&self, p: f64) -> f64 {
        self.scale * self.base.inverse_cdf(p)
    }
    fn partial_moment(&self, q: f64) -> f64 {
        // For a unit t: ∫_{-∞}^x t f(t) dt = -(nu + x^2) f(x) / (nu - 1).
        let x = q / self.scale;
        -self.scale * (self.nu + x * x) * self.base.pdf(x) / (self.nu - 1.0)
    }
    fn cdf(&self, x: f64) -> f64 {
        self.base.cdf(x / self.scale)
    }
    fn pdf(&self, x: f64) -> f64 {
        self.base.pdf(x / self.scale) / self.scale
    }
    fn mean(&self) -> f64 {
        0.0
    }
}

/// Continuous uniform law on `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
pub struct Uniform {
    lo: f64,
    hi: f64,
}

impl Uniform {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Domain(format!("uniform needs lo < hi ({lo}, {hi})")));
        }
        Ok(Uniform { lo, hi })
    }
}

impl TailDistribution for Uniform {
    fn quantile(&self, p: f64) -> f64 {
        self.lo + p * (self.hi - self.lo)
    }
    fn partial_moment(&self, q: f64) -> f64 {
        let q = q.clamp(self.lo, self.hi);
        (q * q - self.lo * self.lo) / (2.0 * (self.hi - self.lo))
    }
    fn cdf(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
    fn pdf(&self, x: f64) -> f64 {
        if x >= self.lo && x <= self.hi {
            1.0 / (self.hi - self.lo)
        } else {
            0.0
        }
    }
    fn mean(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

type Fn1 = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied law given by density, cdf and quantile. The partial moment
/// is obtained by adaptive quadrature over `(-∞, q]`.
pub struct NumericDistribution {
    pdf: Fn1,
    cdf: Fn1,
    quantile: Fn1,
    mean: f64,
}

impl NumericDistribution {
    pub fn new(
        pdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        cdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        quantile: impl Fn(f64) -> f64 + Send + Sync + 'static,
        mean: f64,
    ) -> Self {
        NumericDistribution {
            pdf: Box::new(pdf),
            cdf: Box::new(cdf),
            quantile: Box::new(quantile),
            mean,
        }
    }
}

impl TailDistribution for NumericDistribution {
    fn quantile(&self, p: f64) -> f64 {
        (self.quantile)(p)
    }
    fn partial_moment(&self, q: f64) -> f64 {
        lower_partial_moment(&*self.pdf, q, 1e-10)
    }
    fn cdf(&self, x: f64) -> f64 {
        (self.cdf)(x)
    }
    fn pdf(&self, x: f64) -> f64 {
        (self.pdf)(x)
    }
    fn mean(&self) -> f64 {
        self.mean
    }
}

/// `∫_{-∞}^q t f(t) dt` by adaptive Simpson after the substitution
/// `t = q - (1 - u) / u`, `u ∈ (0, 1]`.
pub fn lower_partial_moment(pdf: &dyn Fn(f64) -> f64, q: f64, abs_tol: f64) -> f64 {
    let g = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let t = q - (1.0 - u) / u;
        let v = t * pdf(t) / (u * u);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    adaptive_simpson(&g, 0.0, 1.0, abs_tol)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    // Split into panels so the recursion sees the bulk of the mass.
    let panels = 64;
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * width;
            let hi = lo + width;
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            step(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40)
        })
        .sum()
}

/// Expectile level `tau = h(alpha)` whose expectile equals the `alpha`-quantile.
pub fn h_map(dist: &dyn TailDistribution, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let q = dist.quantile(alpha);
    let g = dist.partial_moment(q);
    let num = -alpha * q + g;
    let den = 2.0 * g + (1.0 - 2.0 * alpha) * q;
    if den == 0.0 || !den.is_finite() {
        return Err(Error::Singular(format!(
            "h-map denominator vanishes at alpha = {alpha}"
        )));
    }
    Ok(num / den)
}

/// `E[X | X < mu_tau]` from the `tau`-expectile.
///
/// With `mean = 0` this is `(1 + tau / ((1 - 2 tau) F(mu))) mu`; a nonzero
/// mean enters as `mu + tau (mu - mean) / ((1 - 2 tau) F(mu))`.
pub fn es_from_expectile(mu_tau: f64, tau: f64, f_at_mu: f64, mean: f64) -> Result<f64> {
    if tau == 0.5 {
        return Err(Error::Singular("tau = 0.5 makes 1 - 2 tau vanish".into()));
    }
    if !(f_at_mu > 0.0 && f_at_mu <= 1.0) {
        return Err(Error::Singular(format!(
            "F(mu) must lie in (0, 1], got {f_at_mu}"
        )));
    }
    Ok(mu_tau + tau * (mu_tau - mean) / ((1.0 - 2.0 * tau) * f_at_mu))
}

/// ES-to-expectile multiplier `1 + tau / ((1 - 2 tau) alpha)`.
pub fn c_epsilon(tau: f64, alpha: f64) -> f64 {
    1.0 + tau / ((1.0 - 2.0 * tau) * alpha)
}

/// Population `tau`-expectile by bisection on
/// `tau E(X - mu)^+ = (1 - tau) E(mu - X)^+`.
pub fn population_expectile(dist: &dyn TailDistribution, tau: f64) -> f64 {
    // E(mu - X)^+ = mu F(mu) - G(mu); E(X - mu)^+ = (mean - G(mu)) - mu (1 - F(mu)).
    let foc = |mu: f64| {
        let f = dist.cdf(mu);
        let g = dist.partial_moment(mu);
        let below = mu * f - g;
        let above = (dist.mean() - g) - mu * (1.0 - f);
        tau * above - (1.0 - tau) * below
    };
    let mut lo = dist.quantile(1e-9);
    let mut hi = dist.quantile(1.0 - 1e-9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if foc(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Lower- or upper-tail innovation-level `(VaR, ES)` at quantile level `alpha`.
pub fn innovation_var_es(
    dist: &dyn TailDistribution,
    alpha: f64,
    tail: crate::Tail,
) -> Result<(f64, f64)> {
    tail.check_alpha(alpha)?;
    let q = dist.quantile(alpha);
    let g = dist.partial_moment(q);
    let es = match tail {
        crate::Tail::Lower => g / alpha,
        crate::Tail::Upper => (dist.mean() - g) / (1.0 - alpha),
    };
    Ok((q, es))
}

/// Checks that `h` is strictly increasing over the given levels.
pub fn verify_h_monotone(dist: &dyn TailDistribution, levels: &[f64]) -> Result<bool> {
    let mut prev = f64::NEG_INFINITY;
    for &a in levels {
        let t = h_map(dist, a)?;
        if !(t > prev) {
            return Ok(false);
        }
        prev = t;
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn h_map_normal_five_percent() {
        let tau = h_map(&StandardNormal, 0.05).unwrap();
        assert_abs_diff_eq!(tau, 0.012_387_329_047_066_825, epsilon = 1e-10);
    }

    #[test]
    fn h_map_uniform_quarter_is_one_tenth() {
        let u = Uniform::new(-1.0, 1.0).unwrap();
        assert_abs_diff_eq!(h_map(&u, 0.25).unwrap(), 0.1, epsilon = 1e-14);
    }

    #[test]
    fn h_map_symmetric_median() {
        assert_abs_diff_eq!(h_map(&StandardNormal, 0.5).unwrap(), 0.5, epsilon = 1e-12);
        let t5 = ScaledStudentT::standard(5.0).unwrap();
        assert_abs_diff_eq!(h_map(&t5, 0.5).unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn h_map_rejects_bad_alpha() {
        assert!(h_map(&StandardNormal, 0.0).is_err());
        assert!(h_map(&StandardNormal, 1.0).is_err());
    }

    #[test]
    fn es_from_expectile_examples() {
        assert_abs_diff_eq!(es_from_expectile(-1.3, 0.0, 0.1, 0.0).unwrap(), -1.3);
        let es = es_from_expectile(-1.644_853_626_951_472_9, 0.012_387_329_047_066_825, 0.05, 0.0)
            .unwrap();
        assert_abs_diff_eq!(es, -2.062_712_807_507_425, epsilon = 1e-9);
        let scaled = es_from_expectile(-3.0 * 1.2, 0.01, 0.05, 0.0).unwrap();
        assert_abs_diff_eq!(scaled, 3.0 * es_from_expectile(-1.2, 0.01, 0.05, 0.0).unwrap(), epsilon = 1e-12);
        assert!(es_from_expectile(-1.0, 0.01, 0.0, 0.0).is_err());
        assert!(es_from_expectile(-1.0, 0.5, 0.1, 0.0).is_err());
    }

    #[test]
    fn c_epsilon_examples() {
        assert_eq!(c_epsilon(0.0, 0.05), 1.0);
        assert_abs_diff_eq!(c_epsilon(0.012_387_329_047_066_825, 0.05), 1.254_040_343_596, epsilon = 1e-9);
        assert_abs_diff_eq!(c_epsilon(0.25, 0.5), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn student_t_partial_moment_matches_quadrature() {
        let t = ScaledStudentT::unit_variance(4.0).unwrap();
        let pdf = |x: f64| t.pdf(x);
        for q in [-3.0, -1.5, -0.3, 0.0, 1.2] {
            let numeric = lower_partial_moment(&pdf, q, 1e-11);
            assert_abs_diff_eq!(numeric, t.partial_moment(q), epsilon = 1e-8);
        }
    }

    #[test]
    fn student_t_mean_abs_matches_quadrature() {
        let t = ScaledStudentT::unit_variance(4.0).unwrap();
        // E|X| = -2 G(0) for a symmetric law.
        assert_abs_diff_eq!(t.mean_abs(), -2.0 * t.partial_moment(0.0), epsilon = 1e-12);
        // unit t(4): E|T| = 1
        assert_abs_diff_eq!(ScaledStudentT::standard(4.0).unwrap().mean_abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn numeric_distribution_agrees_with_closed_form() {
        let nd = NumericDistribution::new(stats::normal_pdf, stats::normal_cdf, stats::normal_quantile, 0.0);
        for a in [0.01, 0.05, 0.2] {
            assert_abs_diff_eq!(h_map(&nd, a).unwrap(), h_map(&StandardNormal, a).unwrap(), epsilon = 1e-8);
        }
    }

    #[test]
    fn expectile_at_h_equals_quantile() {
        let t5 = ScaledStudentT::standard(5.0).unwrap();
        for a in [0.02, 0.05, 0.1] {
            let tau = h_map(&t5, a).unwrap();
            assert_abs_diff_eq!(population_expectile(&t5, tau), t5.quantile(a), epsilon = 1e-8);
        }
    }

    #[test]
    fn h_below_alpha_and_monotone() {
        let dists: Vec<Box<dyn TailDistribution>> = vec![
            Box::new(StandardNormal),
            Box::new(ScaledStudentT::standard(5.0).unwrap()),
            Box::new(Uniform::new(-1.0, 1.0).unwrap()),
        ];
        let levels: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        for d in &dists {
            assert!(verify_h_monotone(d.as_ref(), &levels).unwrap());
            for &a in levels.iter().filter(|&&a| a < 0.5) {
                assert!(h_map(d.as_ref(), a).unwrap() < a);
            }
        }
    }

    #[test]
    fn upper_tail_innovation_risks_mirror_lower() {
        let (q_lo, es_lo) = innovation_var_es(&StandardNormal, 0.05, crate::Tail::Lower).unwrap();
        let (q_up, es_up) = innovation_var_es(&StandardNormal, 0.95, crate::Tail::Upper).unwrap();
        assert_abs_diff_eq!(q_lo, -q_up, epsilon = 1e-12);
        assert_abs_diff_eq!(es_lo, -es_up, epsilon = 1e-12);
        assert_abs_diff_eq!(es_lo, -2.062_712_807_507_425, epsilon = 1e-12);
    }
}
