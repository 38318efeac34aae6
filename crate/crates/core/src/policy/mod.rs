//! Differentiable policy parametrizations.
//!
//! Parameters are plain `&[f64]` slices of length [`Policy::dim`]. Scores are
//! accumulated into caller buffers so that estimators can reuse allocations.

mod exact;
mod fisher;
mod probe;

pub use exact::{
    exact_policy_gradient, exact_truncated_gradient, policy_table, truncated_gradient,
    truncated_return, ENUMERATION_BUDGET,
};
pub use fisher::{fisher_exact, fisher_gaussian, FisherMatrix};
pub use probe::{constants_probe, ProbeSpec, ScoreConstants};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{sample_categorical, Action};
use crate::error::{Error, Result};

pub const DEFAULT_DAMPING: f64 = 1e-3;

/// A parametrized stochastic policy `pi_theta(a | s)` over finitely many states.
pub trait Policy: Sync {
    type Action: Action;

    fn dim(&self) -> usize;
    fn n_states(&self) -> usize;

    fn log_prob(&self, theta: &[f64], s: usize, a: &Self::Action) -> f64;

    /// `out += scale * grad_theta log pi_theta(a | s)`.
    fn add_score(&self, theta: &[f64], s: usize, a: &Self::Action, scale: f64, out: &mut [f64]);

    fn sample_action<R: Rng + ?Sized>(&self, theta: &[f64], s: usize, rng: &mut R) -> Self::Action;

    fn score(&self, theta: &[f64], s: usize, a: &Self::Action) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.add_score(theta, s, a, 1.0, &mut out);
        out
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        Ok(())
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n_states() {
            return Err(Error::StateOutOfRange { state: s, n_states: self.n_states() });
        }
        Ok(())
    }

    /// Analytic `(G, M)` bounds on the score norm and its Lipschitz constant, when known.
    fn analytic_constants(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Policies over a finite action set.
pub trait DiscretePolicy: Policy<Action = usize> {
    fn n_actions(&self) -> usize;

    /// Write `pi_theta(. | s)` into `out` (length `n_actions`).
    fn probs_into(&self, theta: &[f64], s: usize, out: &mut [f64]);

    fn probs(&self, theta: &[f64], s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions()];
        self.probs_into(theta, s, &mut out);
        out
    }

    /// The softmax-tabular Fisher is singular along per-state constant
    /// directions; families with such a known null space report a basis of
    /// its orthogonal complement so that `mu_F` can be measured there.
    fn fisher_complement_basis(&self) -> Option<DMatrix<f64>> {
        None
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

fn log_softmax_at(logits: &[f64], a: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits[a] - lse
}

/// `pi_theta(a|s) ∝ exp(theta[s, a])`, `d = n_states * n_actions`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxTabular {
    pub n_states: usize,
    pub n_actions: usize,
}

impl SoftmaxTabular {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions }
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }
}

impl Policy for SoftmaxTabular {
    type Action = usize;

    fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    fn n_states(&self) -> usize {
        self.n_states
    }

    fn log_prob(&self, theta: &[f64], s: usize, a: &usize) -> f64 {
        let na = self.n_actions;
        log_softmax_at(&theta[s * na..(s + 1) * na], *a)
    }

    fn add_score(&self, theta: &[f64], s: usize, a: &usize, scale: f64, out: &mut [f64]) {
        let na = self.n_actions;
        let mut p = [0.0; 16];
        let mut heap;
        let probs: &mut [f64] = if na <= 16 {
            &mut p[..na]
        } else {
            heap = vec![0.0; na];
            &mut heap
        };
        softmax_into(&theta[s * na..(s + 1) * na], probs);
        let block = &mut out[s * na..(s + 1) * na];
        for (b, &pb) in block.iter_mut().zip(probs.iter()) {
            *b -= scale * pb;
        }
        block[*a] += scale;
    }

    fn sample_action<R: Rng + ?Sized>(&self, theta: &[f64], s: usize, rng: &mut R) -> usize {
        sample_categorical(&self.probs(theta, s), rng)
    }

    fn analytic_constants(&self) -> Option<(f64, f64)> {
        // ||e_a - p||^2 = (1 - p_a)^2 + sum_{b != a} p_b^2 <= 2; the Hessian of
        // log-softmax is -(diag p - p p^T) whose norm is at most 1.
        Some((2f64.sqrt(), 1.0))
    }
}

impl DiscretePolicy for SoftmaxTabular {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn probs_into(&self, theta: &[f64], s: usize, out: &mut [f64]) {
        let na = self.n_actions;
        softmax_into(&theta[s * na..(s + 1) * na], out);
    }

    fn fisher_complement_basis(&self) -> Option<DMatrix<f64>> {
        let (ns, na) = (self.n_states, self.n_actions);
        let d = ns * na;
        if na < 2 {
            return Some(DMatrix::zeros(d, 0));
        }
        // Helmert basis of the sum-zero subspace within each state block.
        let mut basis = DMatrix::zeros(d, ns * (na - 1));
        for s in 0..ns {
            for k in 1..na {
                let col = s * (na - 1) + (k - 1);
                let norm = ((k * (k + 1)) as f64).sqrt();
                for a in 0..k {
                    basis[(s * na + a, col)] = 1.0 / norm;
                }
                basis[(s * na + k, col)] = -(k as f64) / norm;
            }
        }
        Some(basis)
    }
}

/// `pi_theta(a|s) ∝ exp(phi(s, a)^T theta)` with fixed features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxLinear {
    pub n_states: usize,
    pub n_actions: usize,
    pub dim: usize,
    /// Row-major `[s][a][i]`.
    pub features: Vec<f64>,
}

impl SoftmaxLinear {
    pub fn new(n_states: usize, n_actions: usize, dim: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != n_states * n_actions * dim {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions * dim,
                got: features.len(),
            });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("features must be finite".into()));
        }
        Ok(Self { n_states, n_actions, dim, features })
    }

    #[inline]
    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.dim;
        &self.features[start..start + self.dim]
    }

    fn logits(&self, theta: &[f64], s: usize, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.phi(s, a).iter().zip(theta).map(|(f, t)| f * t).sum();
        }
    }

    fn max_feature_norm(&self) -> f64 {
        self.features
            .chunks_exact(self.dim.max(1))
            .map(|f| f.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

impl Policy for SoftmaxLinear {
    type Action = usize;

    fn dim(&self) -> usize {
        self.dim
    }

    fn n_states(&self) -> usize {
        self.n_states
    }

    fn log_prob(&self, theta: &[f64], s: usize, a: &usize) -> f64 {
        let mut l = vec![0.0; self.n_actions];
        self.logits(theta, s, &mut l);
        log_softmax_at(&l, *a)
    }

    fn add_score(&self, theta: &[f64], s: usize, a: &usize, scale: f64, out: &mut [f64]) {
        let p = self.probs(theta, s);
        for (b, pb) in p.iter().enumerate() {
            for (o, f) in out.iter_mut().zip(self.phi(s, b)) {
                *o -= scale * pb * f;
            }
        }
        for (o, f) in out.iter_mut().zip(self.phi(s, *a)) {
            *o += scale * f;
        }
    }

    fn sample_action<R: Rng + ?Sized>(&self, theta: &[f64], s: usize, rng: &mut R) -> usize {
        sample_categorical(&self.probs(theta, s), rng)
    }

    fn analytic_constants(&self) -> Option<(f64, f64)> {
        // score = phi(s,a) - E phi, Hessian = -Cov(phi)
        let f = self.max_feature_norm();
        Some((2.0 * f, f * f))
    }
}

impl DiscretePolicy for SoftmaxLinear {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn probs_into(&self, theta: &[f64], s: usize, out: &mut [f64]) {
        let mut l = vec![0.0; self.n_actions];
        self.logits(theta, s, &mut l);
        softmax_into(&l, out);
    }
}

/// `pi_theta(. | s) = N(phi(s)^T theta, Sigma)` with `phi(s)` of shape `d x A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianLinearSpec", into = "GaussianLinearSpec")]
pub struct GaussianLinear {
    n_states: usize,
    dim: usize,
    action_dim: usize,
    features: Vec<DMatrix<f64>>,
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    sigma_chol: DMatrix<f64>,
    log_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianLinearSpec {
    pub dim: usize,
    pub action_dim: usize,
    /// Per state, row-major `d x A` feature matrix.
    pub features: Vec<Vec<f64>>,
    /// Row-major `A x A` covariance.
    pub sigma: Vec<f64>,
}

impl TryFrom<GaussianLinearSpec> for GaussianLinear {
    type Error = Error;
    fn try_from(s: GaussianLinearSpec) -> Result<Self> {
        let feats = s
            .features
            .iter()
            .map(|f| {
                if f.len() != s.dim * s.action_dim {
                    return Err(Error::DimensionMismatch { expected: s.dim * s.action_dim, got: f.len() });
                }
                Ok(DMatrix::from_row_slice(s.dim, s.action_dim, f))
            })
            .collect::<Result<Vec<_>>>()?;
        if s.sigma.len() != s.action_dim * s.action_dim {
            return Err(Error::DimensionMismatch { expected: s.action_dim * s.action_dim, got: s.sigma.len() });
        }
        GaussianLinear::new(feats, DMatrix::from_row_slice(s.action_dim, s.action_dim, &s.sigma))
    }
}

impl From<GaussianLinear> for GaussianLinearSpec {
    fn from(g: GaussianLinear) -> Self {
        let row_major = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().as_slice().to_vec() };
        GaussianLinearSpec {
            dim: g.dim,
            action_dim: g.action_dim,
            features: g.features.iter().map(row_major).collect(),
            sigma: row_major(&g.sigma),
        }
    }
}

impl GaussianLinear {
    pub fn new(features: Vec<DMatrix<f64>>, sigma: DMatrix<f64>) -> Result<Self> {
        let n_states = features.len();
        if n_states == 0 {
            return Err(Error::Config("need at least one state".into()));
        }
        let (dim, action_dim) = features[0].shape();
        if features.iter().any(|f| f.shape() != (dim, action_dim)) {
            return Err(Error::Config("feature matrices must share a shape".into()));
        }
        if sigma.shape() != (action_dim, action_dim) {
            return Err(Error::DimensionMismatch { expected: action_dim, got: sigma.nrows() });
        }
        if (&sigma - sigma.transpose()).abs().max() > 1e-12 {
            return Err(Error::Config("covariance must be symmetric".into()));
        }
        let chol = sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite(0.0))?;
        let l = chol.l();
        let sigma_inv = chol.inverse();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let log_norm = -0.5 * (action_dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self { n_states, dim, action_dim, features, sigma, sigma_inv, sigma_chol: l, log_norm })
    }

    /// Scalar action, scalar parameter, `phi(s) = phi_s`, `Sigma = variance`.
    pub fn scalar(phis: &[f64], variance: f64) -> Result<Self> {
        let feats = phis.iter().map(|&f| DMatrix::from_element(1, 1, f)).collect();
        Self::new(feats, DMatrix::from_element(1, 1, variance))
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn features(&self, s: usize) -> &DMatrix<f64> {
        &self.features[s]
    }

    pub fn mean(&self, theta: &[f64], s: usize) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        (self.features[s].transpose() * t).as_slice().to_vec()
    }

    /// Per-state Fisher `phi(s) Sigma^{-1} phi(s)^T`, independent of `theta`.
    pub fn state_fisher(&self, s: usize) -> DMatrix<f64> {
        let f = &self.features[s];
        f * &self.sigma_inv * f.transpose()
    }
}

impl Policy for GaussianLinear {
    type Action = Vec<f64>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn n_states(&self) -> usize {
        self.n_states
    }

    fn log_prob(&self, theta: &[f64], s: usize, a: &Vec<f64>) -> f64 {
        let mu = self.mean(theta, s);
        let diff = DVector::from_iterator(self.action_dim, a.iter().zip(&mu).map(|(x, m)| x - m));
        self.log_norm - 0.5 * diff.dot(&(&self.sigma_inv * &diff))
    }

    fn add_score(&self, theta: &[f64], s: usize, a: &Vec<f64>, scale: f64, out: &mut [f64]) {
        let mu = self.mean(theta, s);
        let diff = DVector::from_iterator(self.action_dim, a.iter().zip(&mu).map(|(x, m)| x - m));
        let g = &self.features[s] * (&self.sigma_inv * diff);
        for (o, gi) in out.iter_mut().zip(g.iter()) {
            *o += scale * gi;
        }
    }

    fn sample_action<R: Rng + ?Sized>(&self, theta: &[f64], s: usize, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(
            self.action_dim,
            (0..self.action_dim).map(|_| StandardNormal.sample(rng)),
        );
        let noise = &self.sigma_chol * z;
        self.mean(theta, s).iter().zip(noise.iter()).map(|(m, e)| m + e).collect()
    }
}

/// The discrete families, dispatched at runtime (used by configuration-driven code).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DiscreteFamily {
    SoftmaxTabular(SoftmaxTabular),
    SoftmaxLinear(SoftmaxLinear),
}

impl Policy for DiscreteFamily {
    type Action = usize;

    fn dim(&self) -> usize {
        match self {
            Self::SoftmaxTabular(p) => p.dim(),
            Self::SoftmaxLinear(p) => p.dim(),
        }
    }

    fn n_states(&self) -> usize {
        match self {
            Self::SoftmaxTabular(p) => p.n_states,
            Self::SoftmaxLinear(p) => p.n_states,
        }
    }

    fn log_prob(&self, theta: &[f64], s: usize, a: &usize) -> f64 {
        match self {
            Self::SoftmaxTabular(p) => p.log_prob(theta, s, a),
            Self::SoftmaxLinear(p) => p.log_prob(theta, s, a),
        }
    }

    fn add_score(&self, theta: &[f64], s: usize, a: &usize, scale: f64, out: &mut [f64]) {
        match self {
            Self::SoftmaxTabular(p) => p.add_score(theta, s, a, scale, out),
            Self::SoftmaxLinear(p) => p.add_score(theta, s, a, scale, out),
        }
    }

    fn sample_action<R: Rng + ?Sized>(&self, theta: &[f64], s: usize, rng: &mut R) -> usize {
        match self {
            Self::SoftmaxTabular(p) => p.sample_action(theta, s, rng),
            Self::SoftmaxLinear(p) => p.sample_action(theta, s, rng),
        }
    }

    fn analytic_constants(&self) -> Option<(f64, f64)> {
        match self {
            Self::SoftmaxTabular(p) => p.analytic_constants(),
            Self::SoftmaxLinear(p) => p.analytic_constants(),
        }
    }
}

impl DiscretePolicy for DiscreteFamily {
    fn n_actions(&self) -> usize {
        match self {
            Self::SoftmaxTabular(p) => p.n_actions,
            Self::SoftmaxLinear(p) => p.n_actions,
        }
    }

    fn probs_into(&self, theta: &[f64], s: usize, out: &mut [f64]) {
        match self {
            Self::SoftmaxTabular(p) => p.probs_into(theta, s, out),
            Self::SoftmaxLinear(p) => p.probs_into(theta, s, out),
        }
    }

    fn fisher_complement_basis(&self) -> Option<DMatrix<f64>> {
        match self {
            Self::SoftmaxTabular(p) => p.fisher_complement_basis(),
            Self::SoftmaxLinear(p) => p.fisher_complement_basis(),
        }
    }
}

/// A policy family together with parameter values, as stored next to MDP files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub d: usize,
    pub policy: PolicyFamily,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PolicyFamily {
    SoftmaxTabular(SoftmaxTabular),
    SoftmaxLinear(SoftmaxLinear),
    GaussianLinear(GaussianLinear),
}

impl PolicyFamily {
    pub fn dim(&self) -> usize {
        match self {
            Self::SoftmaxTabular(p) => p.dim(),
            Self::SoftmaxLinear(p) => p.dim(),
            Self::GaussianLinear(p) => p.dim(),
        }
    }

    pub fn into_discrete(self) -> Result<DiscreteFamily> {
        match self {
            Self::SoftmaxTabular(p) => Ok(DiscreteFamily::SoftmaxTabular(p)),
            Self::SoftmaxLinear(p) => Ok(DiscreteFamily::SoftmaxLinear(p)),
            Self::GaussianLinear(_) => {
                Err(Error::Incompatible("gaussian_linear has continuous actions".into()))
            }
        }
    }
}

/// Exact action distribution of a policy at a state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionDistribution {
    Categorical(Vec<f64>),
    Gaussian { mean: Vec<f64>, covariance: Vec<f64> },
}

impl PolicyFamily {
    /// Exact probabilities (discrete) or density parameters (Gaussian) at `s`.
    pub fn query(&self, theta: &[f64], s: usize) -> Result<ActionDistribution> {
        match self {
            Self::SoftmaxTabular(p) => {
                p.check_theta(theta)?;
                p.check_state(s)?;
                Ok(ActionDistribution::Categorical(p.probs(theta, s)))
            }
            Self::SoftmaxLinear(p) => {
                p.check_theta(theta)?;
                p.check_state(s)?;
                Ok(ActionDistribution::Categorical(p.probs(theta, s)))
            }
            Self::GaussianLinear(p) => {
                p.check_theta(theta)?;
                p.check_state(s)?;
                Ok(ActionDistribution::Gaussian {
                    mean: p.mean(theta, s),
                    covariance: p.sigma().transpose().as_slice().to_vec(),
                })
            }
        }
    }
}

impl PolicyFile {
    pub fn new(policy: PolicyFamily, theta: Vec<f64>) -> Result<Self> {
        let d = policy.dim();
        if theta.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: theta.len() });
        }
        Ok(Self { d, policy, theta })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("policy serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: PolicyFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if f.d != f.policy.dim() || f.theta.len() != f.d {
            return Err(Error::DimensionMismatch { expected: f.policy.dim(), got: f.theta.len() });
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests;
