use calsel::backtest::{dq_test, es_bootstrap_test, hit_series, kupiec_from_hits, kupiec_test};
use calsel::cals::asymmetric_square_loss;
use calsel::el::{convex_hull_contains_origin, max_el_estimate_with, sample_expectile, solve_lambda, ElProblem, ElSearch};
use calsel::garch_sim::{conditional_risks_for, rng_for, simulate, GarchParams, InnovationDist, SimSpec};
use calsel::tail_relations::{
    es_from_expectile, h_map, innovation_var_es, population_expectile, ScaledStudentT, StandardNormal, TailDistribution,
};
use calsel::Tail;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal as Gauss};

fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, 0);
    (0..n).map(|_| Gauss.sample(&mut rng)).collect()
}

fn fast_config() -> ProptestConfig {
    ProptestConfig { cases: 32, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(fast_config())]

    #[test]
    fn same_seed_same_path(seed in any::<u64>(), case in 1u8..=3, n in 10usize..200) {
        let params = GarchParams::case(case).unwrap();
        let spec = SimSpec::new(n);
        let a = simulate(&params, &InnovationDist::Normal, &spec, seed, 3).unwrap();
        let b = simulate(&params, &InnovationDist::Normal, &spec, seed, 3).unwrap();
        prop_assert_eq!(&a.returns, &b.returns);
        prop_assert_eq!(&a.sigmas, &b.sigmas);
        prop_assert!(a.sigmas.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn truth_scales_with_sigma(
        sigmas in prop::collection::vec(0.01f64..10.0, 1..40),
        c in 0.01f64..100.0,
        alpha in 0.005f64..0.3,
        upper in any::<bool>(),
    ) {
        let (tail, alpha) = if upper { (Tail::Upper, 1.0 - alpha) } else { (Tail::Lower, alpha) };
        let dist = InnovationDist::student_t(5.0).unwrap();
        let base = conditional_risks_for(&sigmas, &dist, alpha, tail).unwrap();
        let scaled_sigmas: Vec<f64> = sigmas.iter().map(|s| c * s).collect();
        let scaled = conditional_risks_for(&scaled_sigmas, &dist, alpha, tail).unwrap();
        for ((v, e), (vs, es)) in base.iter().zip(&scaled) {
            prop_assert!((vs - c * v).abs() <= 1e-12 * vs.abs().max(1.0));
            prop_assert!((es - c * e).abs() <= 1e-12 * es.abs().max(1.0));
        }
    }

    #[test]
    fn es_beyond_var(alpha in 0.002f64..0.45) {
        let laws: Vec<Box<dyn TailDistribution>> =
            vec![Box::new(StandardNormal), Box::new(ScaledStudentT::standard(4.0).unwrap())];
        for law in &laws {
            let (v, e) = innovation_var_es(law.as_ref(), alpha, Tail::Lower).unwrap();
            prop_assert!(e < v);
            let (vu, eu) = innovation_var_es(law.as_ref(), 1.0 - alpha, Tail::Upper).unwrap();
            prop_assert!(eu > vu);
        }
    }

    #[test]
    fn expectile_bridge_matches_partial_moment(alpha in 0.005f64..0.45) {
        let law = ScaledStudentT::standard(5.0).unwrap();
        let q = law.quantile(alpha);
        let tau = h_map(&law, alpha).unwrap();
        prop_assert!(tau > 0.0 && tau < alpha);
        let mu = population_expectile(&law, tau);
        prop_assert!((mu - q).abs() < 1e-7);
        let es = es_from_expectile(q, tau, alpha, 0.0).unwrap();
        prop_assert!((es - law.partial_moment(q) / alpha).abs() < 1e-8);
    }

    #[test]
    fn h_is_increasing(a in 0.002f64..0.49, gap in 1e-4f64..0.01) {
        let b = (a + gap).min(0.499);
        prop_assume!(b > a);
        prop_assert!(h_map(&StandardNormal, a).unwrap() < h_map(&StandardNormal, b).unwrap());
    }

    #[test]
    fn asymmetric_loss_is_nonnegative(r in -1e3f64..1e3, tau in 0.001f64..0.999) {
        let l = asymmetric_square_loss(r, tau);
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, r == 0.0);
    }

    #[test]
    fn sample_expectile_first_order_condition(seed in any::<u64>(), n in 20usize..300, tau in 0.01f64..0.99) {
        let x = normal_sample(n, seed);
        let e = sample_expectile(&x, tau).unwrap();
        let foc: f64 = x.iter().map(|&v| {
            let w = if v < e { 1.0 - tau } else { tau };
            w * (v - e)
        }).sum();
        let scale: f64 = x.iter().map(|v| (v - e).abs()).sum();
        prop_assert!(foc.abs() <= 1e-9 * scale.max(1.0));
    }

    #[test]
    fn half_expectile_is_mean(seed in any::<u64>(), n in 2usize..200) {
        let x = normal_sample(n, seed);
        let mean = x.iter().sum::<f64>() / n as f64;
        prop_assert!((sample_expectile(&x, 0.5).unwrap() - mean).abs() < 1e-10);
    }

    #[test]
    fn kupiec_nonnegative(n in 1usize..5000, frac in 0.0f64..=1.0, a in 0.001f64..0.999) {
        let x = ((n as f64) * frac).round() as usize;
        let r = kupiec_test(x.min(n), n, a).unwrap();
        prop_assert!(r.statistic >= 0.0);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn kupiec_ignores_hit_order(seed in any::<u64>(), n in 30usize..400) {
        let mut rng = rng_for(seed, 1);
        let mut hits: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.05 { 0.95 } else { -0.05 }).collect();
        let before = kupiec_from_hits(&hits, 0.05).unwrap();
        hits.reverse();
        hits.rotate_left(seed as usize % n);
        prop_assert_eq!(before, kupiec_from_hits(&hits, 0.05).unwrap());
    }

    #[test]
    fn backtests_unchanged_by_power_of_two_rescaling(seed in any::<u64>(), e in -8i32..8, upper in any::<bool>()) {
        let n = 250;
        let y = normal_sample(n, seed);
        let (tail, alpha) = if upper { (Tail::Upper, 0.9) } else { (Tail::Lower, 0.1) };
        let z = if upper { 1.2816 } else { -1.2816 };
        let var: Vec<f64> = (0..n).map(|t| z * (1.0 + 0.3 * ((t as f64) * 0.1).sin())).collect();
        let c = 2f64.powi(e);
        let ys: Vec<f64> = y.iter().map(|v| c * v).collect();
        let vs: Vec<f64> = var.iter().map(|v| c * v).collect();
        let h1 = hit_series(&y, &var, alpha, tail).unwrap();
        let h2 = hit_series(&ys, &vs, alpha, tail).unwrap();
        prop_assert_eq!(&h1, &h2);
        let a = tail.exceedance_probability(alpha);
        prop_assert_eq!(kupiec_from_hits(&h1, a).unwrap(), kupiec_from_hits(&h2, a).unwrap());
        let d1 = dq_test(&h1, &var, a).unwrap();
        let d2 = dq_test(&h2, &vs, a).unwrap();
        prop_assert_eq!(d1.statistic.to_bits(), d2.statistic.to_bits());
    }

    #[test]
    fn bootstrap_repeats_with_seed(seed in any::<u64>(), boot_seed in any::<u64>()) {
        let n = 400;
        let y = normal_sample(n, seed);
        let var = vec![-1.2816; n];
        let es = vec![-1.7550; n];
        let a = es_bootstrap_test(&y, &var, &es, None, Tail::Lower, 200, boot_seed).unwrap();
        let b = es_bootstrap_test(&y, &var, &es, None, Tail::Lower, 200, boot_seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn lambda_solves_the_dual(seed in any::<u64>(), n in 10usize..80, shift in -0.5f64..0.5) {
        let mut rng = rng_for(seed, 2);
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let a: f64 = Gauss.sample(&mut rng);
                let b: f64 = Gauss.sample(&mut rng);
                [a + shift, 0.5 * a + b - shift]
            })
            .collect();
        prop_assume!(convex_hull_contains_origin(&rows));
        let lam = solve_lambda(&rows).unwrap();
        let mut g = [0.0; 2];
        for w in &rows {
            let d = 1.0 + lam[0] * w[0] + lam[1] * w[1];
            prop_assert!(d > 0.0);
            g[0] += w[0] / d;
            g[1] += w[1] / d;
        }
        prop_assert!(g[0].abs() < 1e-7 * n as f64 && g[1].abs() < 1e-7 * n as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn el_optimum_beats_every_probe(seed in any::<u64>(), n in 150usize..400) {
        let x = normal_sample(n, seed);
        let problem = ElProblem::new(&x, 0.05).unwrap();
        let (sol, probes) = max_el_estimate_with(&problem, &ElSearch::default(), true).unwrap();
        prop_assert!(!probes.is_empty());
        for p in &probes {
            prop_assert!(sol.logel <= p.logel + 1e-9);
        }
        let below = x.iter().filter(|v| **v < sol.mu).count() as f64 / n as f64;
        prop_assert!((below - 0.05).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn upper_tail_el_is_reflection(seed in any::<u64>(), n in 150usize..300) {
        let x = normal_sample(n, seed);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let lower = max_el_estimate_with(&ElProblem::new(&x, 1.0 - 0.95).unwrap(), &ElSearch::default(), false).unwrap().0;
        let upper = max_el_estimate_with(&ElProblem::new(&neg, 0.95).unwrap(), &ElSearch::default(), false).unwrap().0;
        prop_assert_eq!(upper.mu, -lower.mu);
        prop_assert_eq!(upper.tau, lower.tau);
        prop_assert_eq!(upper.oriented_tau(), 1.0 - lower.tau);
    }
}
