use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::linalg::{norm, sub};

use super::{DiscretePolicy, Policy};

/// Parameters and `(s, a)` points at which score constants are probed.
#[derive(Clone, Debug)]
pub struct ProbeSpec<A> {
    pub thetas: Vec<Vec<f64>>,
    pub points: Vec<(usize, A)>,
}

impl ProbeSpec<usize> {
    /// Every `(s, a)` pair of a discrete family.
    pub fn all_pairs<P: DiscretePolicy>(policy: &P, thetas: Vec<Vec<f64>>) -> Self {
        let points = (0..policy.n_states())
            .flat_map(|s| (0..policy.n_actions()).map(move |a| (s, a)))
            .collect();
        Self { thetas, points }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreConstants {
    /// Largest observed `||score||`.
    pub g_observed: f64,
    /// Largest observed `||score(theta1) - score(theta2)|| / ||theta1 - theta2||`.
    pub m_observed: f64,
    pub g_analytic: Option<f64>,
    pub m_analytic: Option<f64>,
    pub pairs_used: usize,
}

impl ScoreConstants {
    /// Analytic bound when the family has one, observed value otherwise.
    pub fn g(&self) -> f64 {
        self.g_analytic.unwrap_or(self.g_observed)
    }

    pub fn m(&self) -> f64 {
        self.m_analytic.unwrap_or(self.m_observed)
    }
}

pub fn constants_probe<P: Policy>(policy: &P, spec: &ProbeSpec<P::Action>) -> Result<ScoreConstants>
where
    P::Action: Action,
{
    if spec.thetas.is_empty() || spec.points.is_empty() {
        return Err(Error::EmptyProbe);
    }
    for t in &spec.thetas {
        policy.check_theta(t)?;
    }
    let mut g_observed: f64 = 0.0;
    let mut m_observed: f64 = 0.0;
    let mut pairs_used = 0;
    for (s, a) in &spec.points {
        policy.check_state(*s)?;
        let scores: Vec<Vec<f64>> = spec.thetas.iter().map(|t| policy.score(t, *s, a)).collect();
        for sc in &scores {
            g_observed = g_observed.max(norm(sc));
        }
        for i in 0..scores.len() {
            for j in i + 1..scores.len() {
                let dt = norm(&sub(&spec.thetas[i], &spec.thetas[j]));
                if dt == 0.0 {
                    continue;
                }
                pairs_used += 1;
                m_observed = m_observed.max(norm(&sub(&scores[i], &scores[j])) / dt);
            }
        }
    }
    let analytic = policy.analytic_constants();
    Ok(ScoreConstants {
        g_observed,
        m_observed,
        g_analytic: analytic.map(|c| c.0),
        m_analytic: analytic.map(|c| c.1),
        pairs_used,
    })
}
