use proptest::prelude::*;
use vrpg_core::algorithms::{run, Algorithm, RunConfig};
use vrpg_core::analysis::*;
use vrpg_core::mdp::{chain2, random_mdp};
use vrpg_core::npg_solver::SgdConfig;
use vrpg_core::oracle::{ExactOracle, TabularOracle};
use vrpg_core::policy::SoftmaxTabular;

#[test]
fn exact_direction_has_no_subproblem_term() {
    let m = chain2();
    let p = SoftmaxTabular::new(2, 2);
    let o = TabularOracle::new(&m, &p, 1e-6).unwrap();
    let mut c = RunConfig::new(Algorithm::Npg, 0.1, 50);
    c.oracle_gradients = true;
    c.lambda = 1e-6;
    let r = run(&m, &p, Some(&o), &[0.0; 4], &c).unwrap();
    let d = decompose_global_bound(&r, &o, 2f64.sqrt(), 1.0).unwrap();
    assert_eq!(d.k, 1);
    assert!(d.term_werr <= 1e-15, "{}", d.term_werr);
    assert!(d.passed);
    assert!((d.kl_init - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn near_optimal_start_has_no_gap() {
    let m = chain2();
    let p = SoftmaxTabular::new(2, 2);
    let o = TabularOracle::new(&m, &p, 1e-6).unwrap();
    let mut theta = [0.0; 4];
    for (s, &a) in o.dp().pi_star.iter().enumerate() {
        theta[s * 2 + a] = 40.0;
    }
    assert!(o.kl_to_opt(&theta).unwrap() < 1e-15);
    let mut c = RunConfig::new(Algorithm::Pg, 1e-3, 50);
    c.oracle_gradients = true;
    let r = run(&m, &p, Some(&o), &theta, &c).unwrap();
    let d = decompose_global_bound(&r, &o, 2f64.sqrt(), 1.0).unwrap();
    assert!(d.lhs.abs() < 1e-9, "{}", d.lhs);
    assert!(d.term_kl < 1e-9);
    assert!(d.passed);
}

#[test]
fn performance_difference_holds_on_random_problems() {
    for seed in 0..20u64 {
        let (ns, na) = (2 + seed as usize % 4, 2 + seed as usize % 3);
        let m = random_mdp(1000 + seed, ns, na).unwrap();
        let p = SoftmaxTabular::new(ns, na);
        let o = TabularOracle::new(&m, &p, 1e-6).unwrap();
        let theta: Vec<f64> = (0..ns * na).map(|i| ((i as f64 + 1.0) * (seed as f64 + 0.5)).sin() * 2.0).collect();
        let scale = m.reward_bound / (1.0 - m.gamma);
        assert!(perf_diff_check(&o, &theta).unwrap() <= 1e-10 * scale, "seed {seed}");
    }
}

#[test]
fn zero_reward_constants() {
    let m = chain2().with_reward(vec![0.0; 4], 1.0).unwrap();
    let p = SoftmaxTabular::new(2, 2);
    let probe = ConstantsProbe::around(&[0.0; 4], 2, 0.5, 10, 20, 3);
    let c = compute_constants(&m, &p, &[0.0; 4], &probe, 1e-6).unwrap();
    assert_eq!(c.sigma2_hat, Some(0.0));
    assert_eq!(c.j_star, Some(0.0));
    assert_eq!(c.j0, Some(0.0));
    assert_eq!(c.eps_bias, Some(0.0));
    for row in audit_truncation(&m, &p, &[0.3, 0.0, 0.0, 0.1], 1..=5, c.g).unwrap() {
        assert_eq!(row.measured, 0.0);
    }
}

#[test]
fn truncation_audit_within_bound() {
    let m = chain2();
    let p = SoftmaxTabular::new(2, 2);
    let theta = [0.4, -0.2, 0.1, 0.3];
    let rows = audit_truncation(&m, &p, &theta, [1, 2, 4, 8, 30, 400], 2f64.sqrt()).unwrap();
    assert!(rows.iter().all(|r| r.ok));
    assert!(rows[0].enumerated && !rows[5].enumerated);
    assert!(rows[5].measured < 1e-10);
    for w in rows.windows(2) {
        assert!(w[1].bound < w[0].bound);
    }
}

#[test]
fn measured_constants_match_their_formulas() {
    let m = random_mdp(11, 3, 2).unwrap();
    let p = SoftmaxTabular::new(3, 2);
    let probe = ConstantsProbe::around(&[0.0; 6], 3, 1.0, 15, 30, 8);
    let mut c = compute_constants(&m, &p, &[0.0; 6], &probe, 1e-6).unwrap();
    assert!(c.formulas_consistent());
    assert!(c.analytic_gm);
    assert!(c.g_observed <= c.g + 1e-12 && c.m_observed <= c.m + 1e-12);
    assert!(c.mu_f > 0.0 && c.lambda_min.abs() < 1e-12);
    assert!(c.sigma2_hat.unwrap() > 0.0 && c.w_hat.unwrap() >= 0.0);
    let report = AuditReport::new(c.clone(), vec![], vec![]);
    let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(v["schema_version"], 1);
    c.l_j *= 1.0 + 1e-15;
    assert!(!c.formulas_consistent());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // the global-gap decomposition holds pathwise for any direction sequence
    #[test]
    fn gap_bound_holds_pathwise(seed in 0u64..1000, alg in 0usize..4, eta in 0.01f64..0.5) {
        let m = random_mdp(seed, 3, 2).unwrap();
        let p = SoftmaxTabular::new(3, 2);
        let o = TabularOracle::new(&m, &p, 1e-6).unwrap();
        let mut c = RunConfig::new(Algorithm::ALL[alg], eta, 20);
        (c.k, c.s, c.m, c.n, c.b) = (4, 2, 2, 5, 2);
        c.sgd = SgdConfig::new(30);
        c.seed = seed;
        let r = run(&m, &p, Some(&o), &[0.0; 6], &c).unwrap();
        let d = decompose_global_bound(&r, &o, 2f64.sqrt(), 1.0).unwrap();
        prop_assert!(d.passed, "{d:?}");
    }
}
