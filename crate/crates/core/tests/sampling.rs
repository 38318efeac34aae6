use rand::Rng;
use vrpg_core::env::Environment;
use vrpg_core::mdp::{chain2, policy_evaluate, TabularMdp};
use vrpg_core::oracle::{ExactOracle, TabularOracle};
use vrpg_core::policy::{policy_table, DiscretePolicy, SoftmaxTabular};
use vrpg_core::rng::RngStream;
use vrpg_core::sampler::{estimate_advantage, sample_nu, sample_trajectory, Sampler};

/// P(s_h = s) for h < H by enumerating every state-action path.
fn enumerated_marginals(m: &TabularMdp, pi: &[f64], horizon: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; m.n_states]; horizon];
    fn walk(m: &TabularMdp, pi: &[f64], h: usize, horizon: usize, s: usize, p: f64, out: &mut Vec<Vec<f64>>) {
        out[h][s] += p;
        if h + 1 == horizon {
            return;
        }
        for a in 0..m.n_actions {
            for n in 0..m.n_states {
                let q = p * pi[s * m.n_actions + a] * m.p(s, a, n);
                if q > 0.0 {
                    walk(m, pi, h + 1, horizon, n, q, out);
                }
            }
        }
    }
    for s in 0..m.n_states {
        if m.rho[s] > 0.0 {
            walk(m, pi, 0, horizon, s, m.rho[s], &mut out);
        }
    }
    out
}

#[test]
fn state_visits_match_enumerated_marginals() {
    let m = chain2();
    let p = SoftmaxTabular::new(2, 2);
    let theta = [0.0; 4];
    let exact = enumerated_marginals(&m, &policy_table(&p, &theta), 3);
    let n = 100_000;
    let sampler = Sampler::new(&m, &p, 11);
    let mut counts = vec![vec![0.0; 2]; 3];
    for t in sampler.batch(&theta, 3, n) {
        for (h, st) in t.steps.iter().enumerate() {
            counts[h][st.state] += 1.0;
        }
    }
    for h in 0..3 {
        for s in 0..2 {
            let pe = exact[h][s];
            let ph = counts[h][s] / n as f64;
            let se = (pe * (1.0 - pe) / n as f64).sqrt();
            assert!((ph - pe).abs() <= 3.0 * se + 1e-12, "h {h} s {s}: {ph} vs {pe}");
        }
    }
}

#[test]
fn trajectories_follow_the_model() {
    let m = vrpg_core::mdp::random_mdp(8, 4, 3).unwrap();
    let p = SoftmaxTabular::new(4, 3);
    let s = Sampler::new(&m, &p, 1);
    for t in s.batch(&[0.3; 12], 7, 200) {
        assert_eq!(t.len(), 7);
        for w in t.steps.windows(2) {
            assert!(m.p(w[0].state, w[0].action, w[1].state) > 0.0);
        }
        for st in &t.steps {
            assert_eq!(st.reward, m.r(st.state, st.action));
        }
    }
}

#[test]
fn identical_seeds_identical_trajectories() {
    let m = chain2();
    let p = SoftmaxTabular::new(2, 2);
    let a = sample_trajectory(&m, &p, &[0.0; 4], 20, &mut RngStream::new(5).lane(1, 2));
    let b = sample_trajectory(&m, &p, &[0.0; 4], 20, &mut RngStream::new(5).lane(1, 2));
    assert_eq!(a, b);
}

#[test]
fn visitation_draws_match_exact_nu() {
    let m = chain2();
    let p = SoftmaxTabular::new(2, 2);
    let theta = [0.4, -0.2, 0.1, 0.3];
    let ev = policy_evaluate(&m, &policy_table(&p, &theta)).unwrap();
    let n = 1_000_000;
    let mut rng = RngStream::new(21).lane(0, 0);
    let mut hist = [0.0; 4];
    let (mut sum_t, mut sum_t2) = (0.0, 0.0);
    for _ in 0..n {
        let (s, a, t) = sample_nu(&m, &p, &theta, &mut rng);
        hist[s * 2 + a] += 1.0;
        sum_t += t as f64;
        sum_t2 += (t * t) as f64;
    }
    let tv: f64 = 0.5 * hist.iter().zip(&ev.nu_rho).map(|(h, e)| (h / n as f64 - e).abs()).sum::<f64>();
    assert!(tv <= 0.01, "TV {tv}");
    let mean = sum_t / n as f64;
    let se = ((sum_t2 / n as f64 - mean * mean) / n as f64).sqrt();
    let expected = m.gamma / (1.0 - m.gamma);
    assert!((mean - expected).abs() <= 3.0 * se, "{mean} vs {expected}");
}

#[test]
fn short_discount_mostly_returns_initial_pairs() {
    let m = chain2().with_gamma(0.01).unwrap();
    let p = SoftmaxTabular::new(2, 2);
    let mut rng = RngStream::new(4).lane(0, 0);
    let zeros = (0..10_000).filter(|_| sample_nu(&m, &p, &[0.0; 4], &mut rng).2 == 0).count();
    assert!(zeros >= 9_500);
}

#[test]
fn advantage_estimates_are_nearly_unbiased() {
    let m = chain2();
    let p = SoftmaxTabular::new(2, 2);
    let theta = [0.0; 4];
    let oracle = TabularOracle::new(&m, &p, 1e-6).unwrap();
    let exact = oracle.advantage_table(&theta).unwrap()[1];
    let h_adv = 60;
    let n = 100_000;
    let mut rng = RngStream::new(9).lane(0, 0);
    let xs: Vec<f64> = (0..n).map(|_| estimate_advantage(&m, &p, &theta, 0, &1, h_adv, &mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let bias_bound = 2.0 * m.reward_bound * m.gamma.powi(h_adv as i32) / (1.0 - m.gamma);
    assert!((mean - exact).abs() <= 3.0 * (var / n as f64).sqrt() + bias_bound, "{mean} vs {exact}");
}

#[test]
fn zero_reward_advantage_is_zero() {
    let m = chain2().with_reward(vec![0.0; 4], 1.0).unwrap();
    let p = SoftmaxTabular::new(2, 2);
    let mut rng = RngStream::new(2).lane(0, 0);
    for _ in 0..100 {
        let s = rng.random_range(0..2);
        assert_eq!(estimate_advantage(&m, &p, &[0.5, 0.0, 0.0, 1.0], s, &1, 30, &mut rng), 0.0);
    }
    assert_eq!(m.n_states(), 2);
    assert_eq!(p.n_actions(), 2);
}
