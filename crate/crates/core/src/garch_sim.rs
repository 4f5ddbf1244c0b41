//! Linear GARCH(p, q) path simulation with ground-truth conditional risks.
//!
//! The volatility recursion is `σ_t = β₀ + Σ β_i σ_{t-i} + Σ γ_j |Y_{t-j}|`
//! with `Y_t = σ_t ε_t`. Paths are generated with ChaCha20, seeded from a
//! 64-bit seed and a stream index, so replications can be split by stream.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal as NormalSampler, StudentT};
use serde::{Deserialize, Serialize};

use crate::tail_relations::{self, ScaledStudentT, StandardNormal, TailDistribution};
use crate::{stats, Error, Result, Tail};

/// Name of the generator recorded in simulation metadata.
pub const GENERATOR: &str = "ChaCha20 (rand_chacha), seed_from_u64 + set_stream";

pub const DEFAULT_BURN_IN: usize = 200;

/// Linear GARCH coefficients `φ = (β₀, γ₁..γ_q, β₁..β_p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub beta0: f64,
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl GarchParams {
    pub fn new(beta0: f64, gammas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        let params = GarchParams {
            beta0,
            gammas,
            betas,
        };
        params.validate()?;
        Ok(params)
    }

    /// GARCH(1,1) presets used by the Monte Carlo design.
    pub fn case(case: u8) -> Result<Self> {
        match case {
            1 => Self::new(0.1, vec![0.3], vec![0.5]),
            2 => Self::new(0.1, vec![0.1], vec![0.8]),
            3 => Self::new(0.1, vec![0.05], vec![0.9]),
            other => Err(Error::Domain(format!("unknown case {other} (expected 1, 2 or 3)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0) {
            return Err(Error::Domain(format!("beta0 must be positive, got {}", self.beta0)));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0)) {
            return Err(Error::Domain(format!("gamma coefficients must be positive, got {g}")));
        }
        let beta_sum: f64 = self.betas.iter().map(|b| b.abs()).sum();
        if !(beta_sum < 1.0) {
            return Err(Error::Domain(format!(
                "sum of |beta| must be below 1 for invertibility, got {beta_sum}"
            )));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.betas.len()
    }

    pub fn q(&self) -> usize {
        self.gammas.len()
    }

    /// Coefficients in `(β₀, γ₁..γ_q, β₁..β_p)` order.
    pub fn to_phi(&self) -> Vec<f64> {
        let mut phi = Vec::with_capacity(1 + self.q() + self.p());
        phi.push(self.beta0);
        phi.extend_from_slice(&self.gammas);
        phi.extend_from_slice(&self.betas);
        phi
    }

    /// Inverse of [`GarchParams::to_phi`]; no domain checks (least-squares
    /// estimates may leave the positivity region).
    pub fn from_phi(phi: &[f64], p: usize, q: usize) -> Self {
        assert_eq!(phi.len(), 1 + p + q, "phi has wrong length");
        GarchParams {
            beta0: phi[0],
            gammas: phi[1..1 + q].to_vec(),
            betas: phi[1 + q..].to_vec(),
        }
    }
}

/// Innovation law, always standardized to mean 0 and variance 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnovationDist {
    Normal,
    /// Student-t scaled by `sqrt((nu - 2) / nu)`.
    StudentT { nu: f64 },
    /// Resampling from a standardized empirical sample.
    Empirical { values: Arc<[f64]> },
}

impl InnovationDist {
    pub fn student_t(nu: f64) -> Result<Self> {
        if !(nu > 2.0) {
            return Err(Error::Domain(format!("Student-t innovations need nu > 2, got {nu}")));
        }
        Ok(InnovationDist::StudentT { nu })
    }

    /// Standardizes `sample` to mean 0, variance 1 (population moments).
    pub fn empirical(sample: &[f64]) -> Result<Self> {
        if sample.len() < 2 {
            return Err(Error::InsufficientData { needed: 1, got: sample.len() });
        }
        let m = stats::mean(sample);
        let var = sample.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / sample.len() as f64;
        if !(var > 0.0) {
            return Err(Error::Domain("empirical sample has zero variance".into()));
        }
        let sd = var.sqrt();
        let values: Vec<f64> = sample.iter().map(|x| (x - m) / sd).collect();
        Ok(InnovationDist::Empirical { values: values.into() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InnovationDist::Normal => NormalSampler.sample(rng),
            InnovationDist::StudentT { nu } => {
                let t: f64 = StudentT::new(*nu).expect("validated nu").sample(rng);
                t * ((nu - 2.0) / nu).sqrt()
            }
            InnovationDist::Empirical { values } => values[rng.random_range(0..values.len())],
        }
    }

    /// `E|ε|`, analytic for the parametric laws and exact for the resample set.
    pub fn mean_abs(&self) -> f64 {
        match self {
            InnovationDist::Normal => (2.0 / std::f64::consts::PI).sqrt(),
            InnovationDist::StudentT { nu } => ScaledStudentT::unit_variance(*nu)
                .expect("validated nu")
                .mean_abs(),
            InnovationDist::Empirical { values } => stats::mean(
                &values.iter().map(|v| v.abs()).collect::<Vec<_>>(),
            ),
        }
    }

    /// Analytic law for ground-truth risks; `None` for empirical resampling.
    pub fn tail_distribution(&self) -> Option<Box<dyn TailDistribution>> {
        match self {
            InnovationDist::Normal => Some(Box::new(StandardNormal)),
            InnovationDist::StudentT { nu } => {
                Some(Box::new(ScaledStudentT::unit_variance(*nu).expect("validated nu")))
            }
            InnovationDist::Empirical { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            InnovationDist::Normal => "normal".into(),
            InnovationDist::StudentT { nu } => format!("t{nu}"),
            InnovationDist::Empirical { values } => format!("empirical({})", values.len()),
        }
    }
}

impl std::str::FromStr for InnovationDist {
    type Err = Error;

    /// Accepts `normal`, `tN` / `t(N)` / `student-t:N`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "normal" || s == "gaussian" {
            return Ok(InnovationDist::Normal);
        }
        let digits = s
            .strip_prefix("student-t:")
            .or_else(|| s.strip_prefix('t'))
            .map(|r| r.trim_matches(|c| c == '(' || c == ')'));
        match digits.and_then(|d| d.parse::<f64>().ok()) {
            Some(nu) => InnovationDist::student_t(nu),
            None => Err(Error::Domain(format!("unknown innovation distribution `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimSpec {
    pub n: usize,
    pub burn_in: usize,
    /// Fail instead of falling back to `β₀` when the unconditional level is undefined.
    pub strict_init: bool,
}

impl SimSpec {
    pub fn new(n: usize) -> Self {
        SimSpec {
            n,
            burn_in: DEFAULT_BURN_IN,
            strict_init: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulatedPath {
    pub returns: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub innovations: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub generator: &'static str,
}

impl SimulatedPath {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

/// Seeded generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn simulate_linear_garch(
    params: &GarchParams,
    dist: &InnovationDist,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SimulatedPath> {
    let spec = SimSpec {
        n,
        burn_in,
        strict_init: false,
    };
    simulate(params, dist, &spec, seed, 0)
}

pub fn simulate(
    params: &GarchParams,
    dist: &InnovationDist,
    spec: &SimSpec,
    seed: u64,
    stream: u64,
) -> Result<SimulatedPath> {
    params.validate()?;
    if spec.n == 0 {
        return Err(Error::Domain("path length must be at least 1".into()));
    }
    let (p, q) = (params.p(), params.q());
    if spec.burn_in < p.max(q) {
        return Err(Error::Domain(format!(
            "burn_in {} shorter than max(p, q) = {}",
            spec.burn_in,
            p.max(q)
        )));
    }
    let mean_abs = dist.mean_abs();
    let denom = 1.0 - params.betas.iter().sum::<f64>() - params.gammas.iter().sum::<f64>() * mean_abs;
    let sigma0 = if denom > 0.0 {
        params.beta0 / denom
    } else if spec.strict_init {
        return Err(Error::Initialization(format!(
            "unconditional volatility undefined (denominator {denom})"
        )));
    } else {
        params.beta0
    };

    let mut rng = rng_for(seed, stream);
    let lag = p.max(q);
    let total = spec.burn_in + spec.n;
    let mut sig = vec![sigma0; lag + total];
    let mut absy = vec![sigma0 * mean_abs; lag + total];
    let mut ys = vec![0.0; lag + total];
    let mut eps = vec![0.0; lag + total];
    for t in lag..lag + total {
        let mut s = params.beta0;
        for (i, b) in params.betas.iter().enumerate() {
            s += b * sig[t - 1 - i];
        }
        for (j, g) in params.gammas.iter().enumerate() {
            s += g * absy[t - 1 - j];
        }
        let e = dist.sample(&mut rng);
        sig[t] = s;
        eps[t] = e;
        ys[t] = s * e;
        absy[t] = ys[t].abs();
    }
    let start = lag + spec.burn_in;
    Ok(SimulatedPath {
        returns: ys[start..].to_vec(),
        sigmas: sig[start..].to_vec(),
        innovations: eps[start..].to_vec(),
        seed,
        stream,
        generator: GENERATOR,
    })
}

/// Per-date ground-truth `(VaR, ES)` on a simulated path.
pub fn true_conditional_risks(
    path: &SimulatedPath,
    dist: &InnovationDist,
    alpha: f64,
    tail: Tail,
) -> Result<Vec<(f64, f64)>> {
    conditional_risks_for(&path.sigmas, dist, alpha, tail)
}

/// `(σ_t Q_α(ε), σ_t ES_α(ε))` for an arbitrary volatility path.
pub fn conditional_risks_for(
    sigmas: &[f64],
    dist: &InnovationDist,
    alpha: f64,
    tail: Tail,
) -> Result<Vec<(f64, f64)>> {
    let law = dist.tail_distribution().ok_or_else(|| {
        Error::Unsupported(format!(
            "no analytic quantile/partial moment for {} innovations",
            dist.label()
        ))
    })?;
    let (q, es) = tail_relations::innovation_var_es(law.as_ref(), alpha, tail)?;
    Ok(sigmas.iter().map(|s| (s * q, s * es)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn case_one_sigma_stays_above_level() {
        let params = GarchParams::case(1).unwrap();
        let path = simulate_linear_garch(&params, &InnovationDist::Normal, 550, 200, 7).unwrap();
        assert_eq!(path.len(), 550);
        assert!(path.sigmas.iter().all(|&s| s > 0.1));
    }

    #[test]
    fn product_identity_is_exact() {
        let params = GarchParams::case(2).unwrap();
        let dist = InnovationDist::student_t(4.0).unwrap();
        let path = simulate_linear_garch(&params, &dist, 300, 50, 1).unwrap();
        for t in 0..path.len() {
            assert_eq!(path.returns[t], path.sigmas[t] * path.innovations[t]);
        }
    }

    #[test]
    fn constant_volatility_degenerate_case() {
        let params = GarchParams::new(1.0, vec![], vec![]).unwrap();
        let path = simulate_linear_garch(&params, &InnovationDist::Normal, 100, 0, 3).unwrap();
        assert!(path.sigmas.iter().all(|&s| s == 1.0));
        assert_eq!(path.returns, path.innovations);
    }

    #[test]
    fn same_seed_same_path() {
        let params = GarchParams::case(1).unwrap();
        let a = simulate_linear_garch(&params, &InnovationDist::Normal, 200, 200, 11).unwrap();
        let b = simulate_linear_garch(&params, &InnovationDist::Normal, 200, 200, 11).unwrap();
        let c = simulate_linear_garch(&params, &InnovationDist::Normal, 200, 200, 12).unwrap();
        assert_eq!(a.returns, b.returns);
        assert_ne!(a.returns, c.returns);
    }

    #[test]
    fn student_t_innovations_have_unit_variance() {
        let params = GarchParams::case(1).unwrap();
        let dist = InnovationDist::student_t(4.0).unwrap();
        let path = simulate_linear_garch(&params, &dist, 100_000, 200, 5).unwrap();
        let var = stats::std_dev(&path.innovations).powi(2);
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn iid_case_moments_within_three_standard_errors() {
        let params = GarchParams::new(1.0, vec![], vec![]).unwrap();
        let n = 100_000;
        let path = simulate_linear_garch(&params, &InnovationDist::Normal, n, 0, 99).unwrap();
        let se = 1.0 / (n as f64).sqrt();
        assert!(stats::mean(&path.returns).abs() < 3.0 * se);
        // Var of sample variance for N(0,1) is 2/n.
        let var = stats::std_dev(&path.returns).powi(2);
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(GarchParams::new(0.0, vec![0.1], vec![0.5]).is_err());
        assert!(GarchParams::new(0.1, vec![-0.1], vec![0.5]).is_err());
        assert!(GarchParams::new(0.1, vec![0.1], vec![1.2]).is_err());
        let params = GarchParams::case(1).unwrap();
        assert!(simulate_linear_garch(&params, &InnovationDist::Normal, 0, 10, 1).is_err());
        assert!(simulate_linear_garch(&params, &InnovationDist::Normal, 10, 0, 1).is_err());
    }

    #[test]
    fn strict_init_flags_explosive_level() {
        // 0.5 + 0.9 E|ε| > 1 so the unconditional level is undefined.
        let params = GarchParams::new(0.1, vec![0.9], vec![0.5]).unwrap();
        let spec = SimSpec { n: 10, burn_in: 5, strict_init: true };
        let err = simulate(&params, &InnovationDist::Normal, &spec, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Initialization(_)));
        let lenient = SimSpec { strict_init: false, ..spec };
        assert!(simulate(&params, &InnovationDist::Normal, &lenient, 1, 0).is_ok());
    }

    #[test]
    fn normal_ground_truth_constant_sigma() {
        let sigmas = vec![1.0; 5];
        let risks = conditional_risks_for(&sigmas, &InnovationDist::Normal, 0.05, Tail::Lower).unwrap();
        for (v, e) in risks {
            assert_abs_diff_eq!(v, -1.644_853_626_951_472_9, epsilon = 1e-9);
            assert_abs_diff_eq!(e, -2.062_712_807_507_425, epsilon = 1e-9);
        }
    }

    #[test]
    fn ground_truth_homogeneous_in_sigma() {
        let sigmas = vec![0.3, 0.7, 1.9];
        let dist = InnovationDist::student_t(4.0).unwrap();
        let base = conditional_risks_for(&sigmas, &dist, 0.05, Tail::Lower).unwrap();
        let scaled_sig: Vec<f64> = sigmas.iter().map(|s| 2.5 * s).collect();
        let scaled = conditional_risks_for(&scaled_sig, &dist, 0.05, Tail::Lower).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert_abs_diff_eq!(2.5 * a.0, b.0, epsilon = 1e-12);
            assert_abs_diff_eq!(2.5 * a.1, b.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn median_var_is_zero_for_symmetric_law() {
        let risks = conditional_risks_for(&[1.0, 2.0], &InnovationDist::Normal, 0.5 - 1e-12, Tail::Lower).unwrap();
        for (v, _) in risks {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn empirical_truth_is_unsupported() {
        let dist = InnovationDist::empirical(&[1.0, -1.0, 2.0, -2.0]).unwrap();
        let err = conditional_risks_for(&[1.0], &dist, 0.05, Tail::Lower).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn parse_distribution_labels() {
        assert!(matches!("normal".parse::<InnovationDist>().unwrap(), InnovationDist::Normal));
        assert!(matches!("t4".parse::<InnovationDist>().unwrap(), InnovationDist::StudentT { nu } if nu == 4.0));
        assert!(matches!("t(5)".parse::<InnovationDist>().unwrap(), InnovationDist::StudentT { nu } if nu == 5.0));
        assert!("t2".parse::<InnovationDist>().is_err());
        assert!("cauchy".parse::<InnovationDist>().is_err());
    }
}
