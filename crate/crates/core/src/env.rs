//! Sampled-environment interface shared by tabular and continuous-action problems.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An action type usable by samplers and estimators.
pub trait Action: Clone + Send + Sync + std::fmt::Debug {
    /// Index of a discrete action, `None` for continuous actions.
    fn discrete_index(&self) -> Option<usize> {
        None
    }
}

impl Action for usize {
    fn discrete_index(&self) -> Option<usize> {
        Some(*self)
    }
}

impl Action for Vec<f64> {}

/// A discounted environment with finitely many states that can be simulated.
pub trait Environment: Sync {
    type Action: Action;

    fn n_states(&self) -> usize;
    fn gamma(&self) -> f64;
    fn reward_bound(&self) -> f64;
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize;
    fn reward(&self, s: usize, a: &Self::Action) -> f64;
    fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: &Self::Action, rng: &mut R) -> usize;
}

/// Inverse-CDF draw from a discrete distribution using a single uniform.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // round-off: fall back to the last index with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Finite-state environment with continuous vector actions, used to drive
/// Gaussian policies through the sampled interface.
///
/// Reward is `R * exp(-|a - c_s|^2 / 2)`, bounded by `R`. The next state is
/// `s + 1 (mod n)` when the first action coordinate is positive, `s` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousActionMdp {
    pub n_states: usize,
    pub action_dim: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
    pub reward_bound: f64,
}

impl ContinuousActionMdp {
    pub fn new(
        gamma: f64,
        rho: Vec<f64>,
        targets: Vec<Vec<f64>>,
        reward_bound: f64,
    ) -> Result<Self> {
        let n_states = rho.len();
        if n_states == 0 || targets.len() != n_states {
            return Err(Error::InvalidMdp("targets must list one vector per state".into()));
        }
        let action_dim = targets[0].len();
        if action_dim == 0 || targets.iter().any(|t| t.len() != action_dim) {
            return Err(Error::InvalidMdp("inconsistent action dimension".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} not in (0,1)")));
        }
        Ok(Self { n_states, action_dim, gamma, rho, targets, reward_bound })
    }
}

impl Environment for ContinuousActionMdp {
    type Action = Vec<f64>;

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

    fn reward(&self, s: usize, a: &Vec<f64>) -> f64 {
        let d2: f64 = a.iter().zip(&self.targets[s]).map(|(x, c)| (x - c) * (x - c)).sum();
        self.reward_bound * (-0.5 * d2).exp()
    }

    fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: &Vec<f64>, _rng: &mut R) -> usize {
        if a[0] > 0.0 {
            (s + 1) % self.n_states
        } else {
            s
        }
    }
}
