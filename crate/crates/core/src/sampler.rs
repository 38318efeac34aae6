//! Trajectory generation, visitation-measure draws and advantage rollouts.
//!
//! Every public sampling call on [`Sampler`] takes a fresh *major* lane index
//! from an internal counter and draws its randomness from lanes
//! `(major, i)`. Batches are generated per-lane and collected in lane order,
//! so results do not depend on whether sampling ran in parallel.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::env::{Action, Environment};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::{LaneRng, RngStream};

/// Cheap fingerprint of a parameter vector, used as an estimator provenance tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThetaTag(pub u64);

impl ThetaTag {
    pub fn of(theta: &[f64]) -> Self {
        // FNV-1a over the raw bit patterns
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in theta {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        ThetaTag(h ^ theta.len() as u64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTag {
    pub root: u64,
    pub major: u64,
    pub minor: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step<A> {
    pub state: usize,
    pub action: A,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<A> {
    pub steps: Vec<Step<A>>,
    pub horizon: usize,
    pub theta_tag: ThetaTag,
    pub seed_tag: SeedTag,
}

impl<A> Trajectory<A> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl Trajectory<usize> {
    /// One-line dump: `H s0 a0 r0 s1 a1 r1 ...`, rewards in round-trip precision.
    pub fn to_dump_line(&self) -> String {
        let mut out = self.horizon.to_string();
        for st in &self.steps {
            write!(out, " {} {} {:?}", st.state, st.action, st.reward).unwrap();
        }
        out
    }

    /// Parse a dump line. Provenance tags are not part of the format and come back zeroed.
    pub fn from_dump_line(line: &str) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("trajectory line: {m}"));
        let mut it = line.split_whitespace();
        let horizon: usize =
            it.next().ok_or_else(|| bad("empty"))?.parse().map_err(|_| bad("horizon"))?;
        let mut steps = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let mut field = || it.next().ok_or_else(|| bad(&format!("missing step {h}")));
            let state = field()?.parse().map_err(|_| bad("state"))?;
            let action = field()?.parse().map_err(|_| bad("action"))?;
            let reward = field()?.parse().map_err(|_| bad("reward"))?;
            steps.push(Step { state, action, reward });
        }
        if it.next().is_some() {
            return Err(bad("trailing fields"));
        }
        Ok(Self { steps, horizon, theta_tag: ThetaTag(0), seed_tag: SeedTag::default() })
    }
}

/// Draw `tau ~ p^H(. | theta)`: `H` action draws and `H` transition draws.
pub fn sample_trajectory<E, P, R>(
    env: &E,
    policy: &P,
    theta: &[f64],
    horizon: usize,
    rng: &mut R,
) -> Trajectory<E::Action>
where
    E: Environment,
    P: Policy<Action = E::Action>,
    R: Rng + ?Sized,
{
    let mut steps = Vec::with_capacity(horizon);
    let mut s = env.sample_initial(rng);
    for _ in 0..horizon {
        let a = policy.sample_action(theta, s, rng);
        let reward = env.reward(s, &a);
        let next = env.sample_next(s, &a, rng);
        steps.push(Step { state: s, action: a, reward });
        s = next;
    }
    Trajectory { steps, horizon, theta_tag: ThetaTag::of(theta), seed_tag: SeedTag::default() }
}

/// Draw `(s, a) ~ nu_rho^theta` by a geometric-length rollout. Also returns the length `T`.
pub fn sample_nu<E, P, R>(env: &E, policy: &P, theta: &[f64], rng: &mut R) -> (usize, E::Action, u64)
where
    E: Environment,
    P: Policy<Action = E::Action>,
    R: Rng + ?Sized,
{
    let geo = Geometric::new(1.0 - env.gamma()).expect("gamma in (0,1)");
    let t = geo.sample(rng);
    let mut s = env.sample_initial(rng);
    for _ in 0..t {
        let a = policy.sample_action(theta, s, rng);
        s = env.sample_next(s, &a, rng);
    }
    let a = policy.sample_action(theta, s, rng);
    (s, a, t)
}

/// Discounted return of an `h`-step rollout from `s` whose first action is `first`.
fn rollout_return<E, P, R>(
    env: &E,
    policy: &P,
    theta: &[f64],
    s: usize,
    first: E::Action,
    h: usize,
    rng: &mut R,
) -> f64
where
    E: Environment,
    P: Policy<Action = E::Action>,
    R: Rng + ?Sized,
{
    let gamma = env.gamma();
    let (mut s, mut a) = (s, first);
    let (mut ret, mut disc) = (0.0, 1.0);
    for t in 0..h {
        ret += disc * env.reward(s, &a);
        disc *= gamma;
        if t + 1 < h {
            s = env.sample_next(s, &a, rng);
            a = policy.sample_action(theta, s, rng);
        }
    }
    ret
}

/// `Q_hat - V_hat` from two independent `h_adv`-step rollouts.
pub fn estimate_advantage<E, P, R>(
    env: &E,
    policy: &P,
    theta: &[f64],
    s: usize,
    a: &E::Action,
    h_adv: usize,
    rng: &mut R,
) -> f64
where
    E: Environment,
    P: Policy<Action = E::Action>,
    R: Rng + ?Sized,
{
    let q = rollout_return(env, policy, theta, s, a.clone(), h_adv, rng);
    let a2 = policy.sample_action(theta, s, rng);
    let v = rollout_return(env, policy, theta, s, a2, h_adv, rng);
    q - v
}

/// Advantage rollout length making the truncation bias of each term at most `1e-4`.
pub fn default_h_adv(gamma: f64, reward_bound: f64) -> usize {
    let eps_adv = 1e-4;
    if reward_bound <= 0.0 {
        return 1;
    }
    let h = ((eps_adv * (1.0 - gamma) / reward_bound).ln() / gamma.ln()).ceil();
    if h.is_finite() && h >= 1.0 {
        h as usize
    } else {
        1
    }
}

/// Seeded sampler with trajectory-budget accounting.
pub struct Sampler<'a, E: Environment, P> {
    env: &'a E,
    policy: &'a P,
    stream: RngStream,
    next_major: AtomicU64,
    used: AtomicU64,
    parallel: bool,
}

impl<'a, E, P> Sampler<'a, E, P>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    pub fn new(env: &'a E, policy: &'a P, seed: u64) -> Self {
        Self {
            env,
            policy,
            stream: RngStream::new(seed),
            next_major: AtomicU64::new(0),
            used: AtomicU64::new(0),
            parallel: false,
        }
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn env(&self) -> &'a E {
        self.env
    }

    pub fn policy(&self) -> &'a P {
        self.policy
    }

    pub fn trajectories_used(&self) -> u64 {
        self.used.load(Ordering::Relaxed)
    }

    fn charge(&self, n: u64) {
        self.used.fetch_add(n, Ordering::Relaxed);
    }

    fn take_major(&self) -> u64 {
        self.next_major.fetch_add(1, Ordering::Relaxed)
    }

    /// A fresh sequential generator, for inner loops that cannot be split into lanes.
    /// Draws made from it are not charged; callers charge through [`Sampler::charge_external`].
    pub fn sequential_rng(&self) -> LaneRng {
        self.stream.lane(self.take_major(), 0)
    }

    pub fn charge_external(&self, n: u64) {
        self.charge(n);
    }

    pub fn trajectory(&self, theta: &[f64], horizon: usize) -> Trajectory<E::Action> {
        self.batch(theta, horizon, 1).pop().unwrap()
    }

    /// `n` independent trajectories, lane `i` generating the `i`-th one.
    pub fn batch(&self, theta: &[f64], horizon: usize, n: usize) -> Vec<Trajectory<E::Action>> {
        let major = self.take_major();
        let root = self.stream.root_seed();
        let one = |i: usize| {
            let mut rng = self.stream.lane(major, i as u64);
            let mut t = sample_trajectory(self.env, self.policy, theta, horizon, &mut rng);
            t.seed_tag = SeedTag { root, major, minor: i as u64 };
            t
        };
        let out = self.map_lanes(n, one);
        self.charge(n as u64);
        out
    }

    pub fn sample_nu(&self, theta: &[f64]) -> (usize, E::Action) {
        let mut rng = self.sequential_rng();
        let (s, a, _) = sample_nu(self.env, self.policy, theta, &mut rng);
        self.charge(1);
        (s, a)
    }

    pub fn estimate_advantage(&self, theta: &[f64], s: usize, a: &E::Action, h_adv: usize) -> f64 {
        let mut rng = self.sequential_rng();
        let adv = estimate_advantage(self.env, self.policy, theta, s, a, h_adv, &mut rng);
        self.charge(1);
        adv
    }

    /// Apply `f` to lanes `0..n`, collecting in lane order.
    pub fn map_lanes<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}

impl<A: Action> Trajectory<A> {
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut disc = 1.0;
        let mut ret = 0.0;
        for st in &self.steps {
            ret += disc * st.reward;
            disc *= gamma;
        }
        ret
    }
}
