mod common;

use proptest::prelude::*;

use rpp::data::{mean_query_prior, winf_distance};
use rpp::divergence::{privacy_loss_g, renyi_gaussian, GaussianPair, GaussianPrior, PrivacyTarget};
use rpp::gaussian::{calibrate_closed_form, calibrate_exact, domain_floor};
use rpp::gmm::em_fit_traced;
use rpp::gmm_calibration::{gmm_condition_lhs, gmm_domain_floor, noised_quadrature, GmmPair};
use rpp::quadrature::integrate_density;
use rpp::transport::{cost_matrix, solve_ot};

use common::*;

fn prior() -> impl Strategy<Value = GaussianPrior> {
    (-10.0..10.0f64, 0.1..10.0f64).prop_map(|(m, v)| GaussianPrior::new(m, v).unwrap())
}

fn gaussian_pair() -> impl Strategy<Value = GaussianPair> {
    (prior(), prior()).prop_map(|(p, q)| GaussianPair::new(p, q))
}

fn alpha() -> impl Strategy<Value = f64> {
    1.01..10.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn privacy_loss_decreases_with_noise(pair in gaussian_pair(), a in alpha(), s in 0.0..50.0f64, d in 0.0..50.0f64) {
        let t1 = domain_floor(&pair, a) + s;
        let t2 = t1 + d;
        let g1 = privacy_loss_g(t1, a, &pair).unwrap();
        let g2 = privacy_loss_g(t2, a, &pair).unwrap();
        prop_assert!(g2 <= g1 + 1e-12 * g1.abs().max(1.0));
    }

    #[test]
    fn divergence_is_non_negative(p in prior(), q in prior(), a in alpha()) {
        prop_assume!((1.0 - a) * p.var() + a * q.var() > 0.0);
        prop_assert!(renyi_gaussian(a, &p, &q).unwrap() >= -1e-12);
    }

    #[test]
    fn divergence_vanishes_on_identical_priors(p in prior(), a in alpha()) {
        prop_assert!(renyi_gaussian(a, &p, &p).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn closed_form_never_below_exact(pair in gaussian_pair(), a in alpha(), eps in 0.05..5.0f64) {
        let target = PrivacyTarget::new(a, eps).unwrap();
        let closed = calibrate_closed_form(&pair, &target).unwrap();
        let exact = calibrate_exact(&pair, &target).unwrap();
        prop_assert!(closed.theta_sq >= exact.theta_sq - 1e-9);
        prop_assert!(exact.achieved_divergence <= eps);
    }

    #[test]
    fn looser_budget_needs_less_noise(pair in gaussian_pair(), a in alpha(), e1 in 0.05..5.0f64, de in 0.0..5.0f64) {
        let tight = PrivacyTarget::new(a, e1).unwrap();
        let loose = PrivacyTarget::new(a, e1 + de).unwrap();
        let exact = (calibrate_exact(&pair, &tight).unwrap(), calibrate_exact(&pair, &loose).unwrap());
        let closed = (
            calibrate_closed_form(&pair, &tight).unwrap(),
            calibrate_closed_form(&pair, &loose).unwrap(),
        );
        prop_assert!(exact.1.theta_sq <= exact.0.theta_sq);
        prop_assert!(closed.1.theta_sq <= closed.0.theta_sq + 1e-12 * closed.0.theta_sq.max(1.0));
    }

    #[test]
    fn winf_is_translation_covariant(seed in 0u64..1000, n in 1usize..60, m in 1usize..60, c in -20.0..20.0f64) {
        let mut r = rng(seed);
        let xs = normal_samples(&mut r, n, 0.0, 2.0);
        let ys = normal_samples(&mut r, m, 1.0, 1.0);
        let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let base = winf_distance(&xs, &ys).unwrap();
        let moved = winf_distance(&shift(&xs), &shift(&ys)).unwrap();
        prop_assert!((base - moved).abs() <= 1e-12 * (1.0 + c.abs()) * 4.0);
        let against_self = winf_distance(&shift(&xs), &xs).unwrap();
        prop_assert!((against_self - c.abs()).abs() <= 1e-12 * (1.0 + c.abs()) * 4.0);
    }

    #[test]
    fn duplicating_samples_shrinks_mean_variance(seed in 0u64..1000, n in 2usize..200) {
        let mut r = rng(seed);
        let xs = normal_samples(&mut r, n, 3.0, 1.5);
        let twice: Vec<f64> = xs.iter().chain(&xs).copied().collect();
        let (once, doubled) = (mean_query_prior(&xs).unwrap(), mean_query_prior(&twice).unwrap());
        let ratio = (n as f64 - 1.0) / (2.0 * n as f64 - 1.0);
        prop_assert!((doubled.var() - ratio * once.var()).abs() <= 1e-10 * once.var());
        prop_assert!((doubled.mu() - once.mu()).abs() <= 1e-12 * (1.0 + once.mu().abs()));
    }

    #[test]
    fn coupling_matches_marginals(seed in 0u64..10_000, k in 1usize..6, l in 1usize..6) {
        let mut r = rng(seed);
        let (p, q) = (mixture(&mut r, k), mixture(&mut r, l));
        let plan = solve_ot(&p.weights(), &q.weights(), &cost_matrix(p.components(), q.components())).unwrap();
        for (row, w) in plan.pi.iter().zip(p.weights()) {
            prop_assert!((row.iter().sum::<f64>() - w).abs() <= 1e-10);
            prop_assert!(row.iter().all(|m| *m >= 0.0));
        }
        for (col, w) in q.weights().iter().enumerate() {
            let total: f64 = plan.pi.iter().map(|row| row[col]).sum();
            prop_assert!((total - w).abs() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_ascends_and_stays_normalised(seed in 0u64..1000, k in 1usize..5) {
        let mut r = rng(seed);
        let xs = mixture_samples(&mut r, 300, &[(0.4, -3.0, 1.0), (0.6, 2.0, 0.5)]);
        let run = em_fit_traced(&xs, k, seed).unwrap();
        for w in run.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
        let weights: f64 = run.prior.weights().iter().sum();
        prop_assert!((weights - 1.0).abs() <= 1e-12);
        prop_assert!((integrate_density(&run.prior.density()).unwrap() - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn mixture_bound_dominates_divergence(seed in 0u64..10_000, k in 1usize..4, l in 1usize..4, a in 1.1..6.0f64, extra in 0.0..20.0f64) {
        let mut r = rng(seed);
        let pair = GmmPair::new(mixture(&mut r, k), mixture(&mut r, l)).unwrap();
        let theta_sq = gmm_domain_floor(&pair, a) + extra + 0.5;
        let lhs = gmm_condition_lhs(theta_sq, a, &pair).unwrap();
        let quad = noised_quadrature(theta_sq, a, &pair).unwrap();
        prop_assert!(lhs >= quad - 1e-7, "lhs {lhs} < quadrature {quad}");
    }
}
