//! Tabular MDPs and their exact dynamic-programming solutions.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sample_categorical, Environment};
use crate::error::{Error, Result};
use crate::linalg::lu_solve;
use crate::rng::RngStream;

pub const DEFAULT_VI_TOL: f64 = 1e-10;
pub const VI_ITERATION_CAP: usize = 1_000_000;
const SUM_TOL: f64 = 1e-12;

/// Finite MDP with rewards `r(s, a)` bounded by `reward_bound`.
///
/// `transition` is stored row-major as `[s][a][s']`, `reward` as `[s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub reward_bound: f64,
    pub rho: Vec<f64>,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MdpViolation {
    Shape(String),
    Stochasticity { s: usize, a: usize, sum: f64 },
    NegativeProbability { s: usize, a: usize, next: usize },
    RewardBound { s: usize, a: usize, reward: f64 },
    InitialDistribution { sum: f64 },
    NegativeInitial { s: usize },
    Discount { gamma: f64 },
    NonFinite,
}

impl fmt::Display for MdpViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape(m) => write!(f, "shape: {m}"),
            Self::Stochasticity { s, a, sum } => {
                write!(f, "transition row ({s},{a}) sums to {sum}")
            }
            Self::NegativeProbability { s, a, next } => {
                write!(f, "negative transition probability P[{s}][{a}][{next}]")
            }
            Self::RewardBound { s, a, reward } => {
                write!(f, "reward r({s},{a}) = {reward} exceeds the bound")
            }
            Self::InitialDistribution { sum } => write!(f, "rho sums to {sum}"),
            Self::NegativeInitial { s } => write!(f, "rho({s}) is negative"),
            Self::Discount { gamma } => write!(f, "gamma = {gamma} not in (0,1)"),
            Self::NonFinite => write!(f, "non-finite entry"),
        }
    }
}

/// Optimal values from value iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpSolution {
    pub v_star: Vec<f64>,
    pub q_star: Vec<f64>,
    /// Greedy optimal action per state.
    pub pi_star: Vec<usize>,
    pub j_star: f64,
    pub bellman_residual: f64,
    pub iterations: usize,
}

impl DpSolution {
    /// The deterministic optimal policy as an `n_states x n_actions` table.
    pub fn policy_table(&self, n_actions: usize) -> Vec<f64> {
        let mut t = vec![0.0; self.pi_star.len() * n_actions];
        for (s, &a) in self.pi_star.iter().enumerate() {
            t[s * n_actions + a] = 1.0;
        }
        t
    }
}

/// Exact evaluation of a fixed stochastic policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub adv: Vec<f64>,
    pub j: f64,
    /// Normalized discounted state visitation `d_rho^pi`.
    pub d_rho: Vec<f64>,
    /// State-action visitation `nu_rho^pi(s, a) = d_rho^pi(s) pi(a|s)`.
    pub nu_rho: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdpKind {
    Chain2,
    Random,
}

impl TabularMdp {
    /// Build and validate.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward_bound: f64,
        rho: Vec<f64>,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self { n_states, n_actions, gamma, reward_bound, rho, transition, reward };
        mdp.check()?;
        Ok(mdp)
    }

    pub fn check(&self) -> Result<()> {
        let report = validate_mdp(self);
        if report.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidMdp(msg.join("; ")))
        }
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Replace the reward table (bound checked).
    pub fn with_reward(mut self, reward: Vec<f64>, reward_bound: f64) -> Result<Self> {
        self.reward = reward;
        self.reward_bound = reward_bound;
        self.check()?;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.check()?;
        Ok(self)
    }

    pub fn with_rho(mut self, rho: Vec<f64>) -> Result<Self> {
        self.rho = rho;
        self.check()?;
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("MDP serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mdp: TabularMdp = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        mdp.check()?;
        Ok(mdp)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Per-state transition matrix and reward vector under a policy table.
    fn induced_chain(&self, pi: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut p = DMatrix::zeros(ns, ns);
        let mut r = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let w = pi[s * na + a];
                if w == 0.0 {
                    continue;
                }
                r[s] += w * self.r(s, a);
                for (next, &pn) in self.row(s, a).iter().enumerate() {
                    p[(s, next)] += w * pn;
                }
            }
        }
        (p, r)
    }

    fn bellman_q(&self, v: &[f64]) -> Vec<f64> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut q = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = self.row(s, a).iter().zip(v).map(|(p, vn)| p * vn).sum();
                q[s * na + a] = self.r(s, a) + self.gamma * ev;
            }
        }
        q
    }
}

impl Environment for TabularMdp {
    type Action = usize;

    fn n_states(&self) -> usize {
        self.n_states
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.rho, rng)
    }

    fn reward(&self, s: usize, a: &usize) -> f64 {
        self.r(s, *a)
    }

    fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: &usize, rng: &mut R) -> usize {
        sample_categorical(self.row(s, *a), rng)
    }
}

/// List every violated structural invariant; empty when the MDP is valid.
pub fn validate_mdp(mdp: &TabularMdp) -> Vec<MdpViolation> {
    let mut out = Vec::new();
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if ns == 0 || na == 0 {
        out.push(MdpViolation::Shape("n_states and n_actions must be positive".into()));
        return out;
    }
    if mdp.transition.len() != ns * na * ns {
        out.push(MdpViolation::Shape(format!(
            "transition has {} entries, expected {}",
            mdp.transition.len(),
            ns * na * ns
        )));
    }
    if mdp.reward.len() != ns * na {
        out.push(MdpViolation::Shape(format!(
            "reward has {} entries, expected {}",
            mdp.reward.len(),
            ns * na
        )));
    }
    if mdp.rho.len() != ns {
        out.push(MdpViolation::Shape(format!("rho has {} entries, expected {ns}", mdp.rho.len())));
    }
    if !out.is_empty() {
        return out;
    }
    let finite = mdp
        .transition
        .iter()
        .chain(&mdp.reward)
        .chain(&mdp.rho)
        .chain([&mdp.gamma, &mdp.reward_bound])
        .all(|x| x.is_finite());
    if !finite {
        out.push(MdpViolation::NonFinite);
        return out;
    }
    for s in 0..ns {
        for a in 0..na {
            let row = mdp.row(s, a);
            if let Some(next) = row.iter().position(|&p| p < 0.0) {
                out.push(MdpViolation::NegativeProbability { s, a, next });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                out.push(MdpViolation::Stochasticity { s, a, sum });
            }
            let r = mdp.r(s, a);
            if r.abs() > mdp.reward_bound {
                out.push(MdpViolation::RewardBound { s, a, reward: r });
            }
        }
    }
    if let Some(s) = mdp.rho.iter().position(|&p| p < 0.0) {
        out.push(MdpViolation::NegativeInitial { s });
    }
    let rho_sum: f64 = mdp.rho.iter().sum();
    if (rho_sum - 1.0).abs() > SUM_TOL {
        out.push(MdpViolation::InitialDistribution { sum: rho_sum });
    }
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        out.push(MdpViolation::Discount { gamma: mdp.gamma });
    }
    out
}

fn greedy(q: &[f64], ns: usize, na: usize) -> Vec<usize> {
    (0..ns)
        .map(|s| {
            let row = &q[s * na..(s + 1) * na];
            let mut best = 0;
            for a in 1..na {
                if row[a] > row[best] + 1e-14 {
                    best = a;
                }
            }
            best
        })
        .collect()
}

fn sup_residual(mdp: &TabularMdp, v: &[f64]) -> f64 {
    let q = mdp.bellman_q(v);
    let na = mdp.n_actions;
    v.iter()
        .enumerate()
        .map(|(s, vs)| {
            let tv = q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (tv - vs).abs()
        })
        .fold(0.0, f64::max)
}

/// Value iteration to `||TV - V||_inf <= tol`, followed by exact evaluation
/// of the greedy policy (policy-iteration polish) so that `v_star` is exact
/// up to linear-solve round-off.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<DpSolution> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("value iteration tolerance must be positive, got {tol}")));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; ns];
    let mut iterations = 0;
    loop {
        let q = mdp.bellman_q(&v);
        let next: Vec<f64> = (0..ns)
            .map(|s| q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let res = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        iterations += 1;
        if res <= tol {
            break;
        }
        if iterations >= VI_ITERATION_CAP {
            return Err(Error::NoConvergence(VI_ITERATION_CAP));
        }
    }
    // Polish: policy iteration from the greedy policy.
    let mut pi_star = greedy(&mdp.bellman_q(&v), ns, na);
    for _ in 0..=ns * na {
        let exact = state_values(mdp, &deterministic_table(&pi_star, na))?;
        let q = mdp.bellman_q(&exact);
        let mut improved = false;
        for s in 0..ns {
            let best = greedy(&q[s * na..(s + 1) * na], 1, na)[0];
            if q[s * na + best] > exact[s] + 1e-12 && best != pi_star[s] {
                pi_star[s] = best;
                improved = true;
            }
        }
        if sup_residual(mdp, &exact) <= sup_residual(mdp, &v) {
            v = exact;
        }
        if !improved {
            break;
        }
    }
    let q_star = mdp.bellman_q(&v);
    let j_star = mdp.rho.iter().zip(&v).map(|(p, x)| p * x).sum();
    let bellman_residual = sup_residual(mdp, &v);
    Ok(DpSolution { v_star: v, q_star, pi_star, j_star, bellman_residual, iterations })
}

fn deterministic_table(actions: &[usize], na: usize) -> Vec<f64> {
    let mut t = vec![0.0; actions.len() * na];
    for (s, &a) in actions.iter().enumerate() {
        t[s * na + a] = 1.0;
    }
    t
}

fn check_policy_table(mdp: &TabularMdp, pi: &[f64]) -> Result<()> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if pi.len() != ns * na {
        return Err(Error::DimensionMismatch { expected: ns * na, got: pi.len() });
    }
    for s in 0..ns {
        let row = &pi[s * na..(s + 1) * na];
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("policy row {s} is not a distribution")));
        }
    }
    Ok(())
}

fn state_values(mdp: &TabularMdp, pi: &[f64]) -> Result<Vec<f64>> {
    let ns = mdp.n_states;
    let (p, r) = mdp.induced_chain(pi);
    let a = DMatrix::identity(ns, ns) - p * mdp.gamma;
    lu_solve(a, &r)
}

/// Exact `V, Q, A, J, d, nu` for a policy table `pi[s][a]` by direct linear solves.
pub fn policy_evaluate(mdp: &TabularMdp, pi: &[f64]) -> Result<PolicyEvaluation> {
    check_policy_table(mdp, pi)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let (p, r) = mdp.induced_chain(pi);
    let eye = DMatrix::<f64>::identity(ns, ns);
    let v = lu_solve(&eye - &p * mdp.gamma, &r)?;
    let q = mdp.bellman_q(&v);
    let mut adv = q.clone();
    for s in 0..ns {
        for a in 0..na {
            adv[s * na + a] -= v[s];
        }
    }
    let j = mdp.rho.iter().zip(&v).map(|(a, b)| a * b).sum();
    let rhs: Vec<f64> = mdp.rho.iter().map(|x| (1.0 - mdp.gamma) * x).collect();
    let mut d = lu_solve(&eye - p.transpose() * mdp.gamma, &rhs)?;
    let total: f64 = d.iter().sum();
    for x in &mut d {
        *x /= total;
    }
    let mut nu = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            nu[s * na + a] = d[s] * pi[s * na + a];
        }
    }
    Ok(PolicyEvaluation { v, q, adv, j, d_rho: d, nu_rho: nu })
}

/// Two states, two actions: action 0 stays, action 1 flips; reward 1 in
/// state 1 regardless of action; gamma = 0.9; start in state 0.
pub fn chain2() -> TabularMdp {
    let transition = vec![
        1.0, 0.0, // s0, stay
        0.0, 1.0, // s0, flip
        0.0, 1.0, // s1, stay
        1.0, 0.0, // s1, flip
    ];
    TabularMdp::new(2, 2, 0.9, 1.0, vec![1.0, 0.0], transition, vec![0.0, 0.0, 1.0, 1.0])
        .expect("chain2 is valid")
}

/// Random MDP: transition rows and `rho` are normalized positive draws,
/// rewards uniform in `[-1, 1]`, `gamma = 0.9`. Deterministic in `seed`.
pub fn random_mdp(seed: u64, n_states: usize, n_actions: usize) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::Config("sizes must be >= 1".into()));
    }
    let mut rng = RngStream::new(seed).lane(0x6d6470, 0);
    let mut positive = |n: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    };
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(positive(n_states));
    }
    let rho = positive(n_states);
    let reward: Vec<f64> =
        (0..n_states * n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut mdp = TabularMdp { n_states, n_actions, gamma: 0.9, reward_bound: 1.0, rho, transition, reward };
    renormalize(&mut mdp);
    mdp.check()?;
    Ok(mdp)
}

// Normalization can leave rows off by an ulp or two; push the residue into the largest entry.
fn renormalize(mdp: &mut TabularMdp) {
    fn fix(row: &mut [f64]) {
        let sum: f64 = row.iter().sum();
        let imax = (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
        row[imax] += 1.0 - sum;
    }
    let ns = mdp.n_states;
    for row in mdp.transition.chunks_exact_mut(ns) {
        fix(row);
    }
    fix(&mut mdp.rho);
}

pub fn make_test_mdp(kind: MdpKind, seed: u64, n_states: usize, n_actions: usize) -> Result<TabularMdp> {
    match kind {
        MdpKind::Chain2 => Ok(chain2()),
        MdpKind::Random => random_mdp(seed, n_states, n_actions),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(mdp: &TabularMdp) -> Vec<f64> {
        vec![1.0 / mdp.n_actions as f64; mdp.n_states * mdp.n_actions]
    }

    #[test]
    fn chain2_is_valid() {
        assert!(validate_mdp(&chain2()).is_empty());
    }

    #[test]
    fn bad_row_and_discount_reported() {
        let mut m = chain2();
        m.transition[0] = 0.9;
        assert!(matches!(validate_mdp(&m)[0], MdpViolation::Stochasticity { s: 0, a: 0, .. }));
        let mut m = chain2();
        m.gamma = 1.0;
        assert_eq!(validate_mdp(&m), vec![MdpViolation::Discount { gamma: 1.0 }]);
        let mut m = chain2();
        m.reward[2] = 2.0;
        assert!(matches!(validate_mdp(&m)[0], MdpViolation::RewardBound { .. }));
    }

    #[test]
    fn single_state_geometric_series() {
        let m = TabularMdp::new(1, 1, 0.9, 1.0, vec![1.0], vec![1.0], vec![1.0]).unwrap();
        let dp = value_iteration(&m, DEFAULT_VI_TOL).unwrap();
        assert!((dp.j_star - 10.0).abs() < 1e-9);
    }

    #[test]
    fn chain2_optimum() {
        let dp = value_iteration(&chain2(), DEFAULT_VI_TOL).unwrap();
        assert!((dp.j_star - 9.0).abs() < 1e-10);
        assert_eq!(dp.pi_star, vec![1, 0]);
        assert!(dp.bellman_residual <= DEFAULT_VI_TOL);
        for s in 0..2 {
            let m = dp.q_star[s * 2].max(dp.q_star[s * 2 + 1]);
            assert!((m - dp.v_star[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_reward_is_zero() {
        let m = random_mdp(3, 4, 3).unwrap().with_reward(vec![0.0; 12], 1.0).unwrap();
        let dp = value_iteration(&m, DEFAULT_VI_TOL).unwrap();
        assert_eq!(dp.j_star, 0.0);
        assert!(dp.v_star.iter().all(|&v| v == 0.0));
        let ev = policy_evaluate(&m, &uniform(&m)).unwrap();
        assert!(ev.v.iter().chain(&ev.adv).all(|&x| x == 0.0));
    }

    #[test]
    fn optimal_policy_evaluates_to_j_star() {
        let m = chain2();
        let dp = value_iteration(&m, DEFAULT_VI_TOL).unwrap();
        let ev = policy_evaluate(&m, &dp.policy_table(2)).unwrap();
        assert!((ev.j - 9.0).abs() < 1e-10);
    }

    #[test]
    fn evaluation_invariants_on_random_mdps() {
        for seed in 0..10 {
            let m = random_mdp(seed, 5, 3).unwrap();
            let mut rng = RngStream::new(seed).lane(1, 1);
            let mut pi = vec![0.0; 15];
            for s in 0..5 {
                let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.01).collect();
                let t: f64 = raw.iter().sum();
                for a in 0..3 {
                    pi[s * 3 + a] = raw[a] / t;
                }
            }
            let ev = policy_evaluate(&m, &pi).unwrap();
            assert!((ev.d_rho.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!((ev.nu_rho.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for s in 0..5 {
                let mean_adv: f64 = (0..3).map(|a| pi[s * 3 + a] * ev.adv[s * 3 + a]).sum();
                assert!(mean_adv.abs() < 1e-10);
            }
            let j: f64 = m.rho.iter().zip(&ev.v).map(|(a, b)| a * b).sum();
            assert!((j - ev.j).abs() < 1e-10);
            let dp = value_iteration(&m, DEFAULT_VI_TOL).unwrap();
            assert!(dp.j_star >= ev.j - 1e-8);
        }
    }

    #[test]
    fn random_is_deterministic_in_seed() {
        assert_eq!(random_mdp(7, 5, 3).unwrap(), random_mdp(7, 5, 3).unwrap());
        assert_ne!(random_mdp(7, 5, 3).unwrap().transition, random_mdp(8, 5, 3).unwrap().transition);
        assert_eq!(make_test_mdp(MdpKind::Chain2, 99, 1, 1).unwrap(), chain2());
    }

    #[test]
    fn toml_round_trip_is_exact() {
        for seed in 0..5 {
            let m = random_mdp(seed, 4, 3).unwrap();
            let back = TabularMdp::from_toml(&m.to_toml()).unwrap();
            assert_eq!(m, back);
        }
    }
}
