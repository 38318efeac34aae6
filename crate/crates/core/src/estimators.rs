//! Truncated GPOMDP, importance weights, the weighted estimator and the
//! recursive semi-stochastic gradient, plus empirical moment probes.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::policy::Policy;
use crate::sampler::{Sampler, ThetaTag, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Gpomdp,
    Weighted,
    SrvrRecursive,
    BatchMean,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradEstimate {
    pub g: Vec<f64>,
    pub kind: EstimatorKind,
    pub theta_at: Vec<f64>,
    pub trajectories_used: u64,
}

impl GradEstimate {
    /// An estimate supplied by an exact oracle; costs nothing.
    pub fn exact(g: Vec<f64>, theta: &[f64]) -> Self {
        Self { g, kind: EstimatorKind::Exact, theta_at: theta.to_vec(), trajectories_used: 0 }
    }

    pub fn is_at(&self, theta: &[f64]) -> bool {
        self.theta_at.len() == theta.len()
            && self.theta_at.iter().zip(theta).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_tag<A>(traj: &Trajectory<A>, theta: &[f64]) -> Result<()> {
    if traj.theta_tag != ThetaTag::of(theta) {
        return Err(Error::Provenance("trajectory was not sampled at the stated parameters".into()));
    }
    Ok(())
}

/// Core of both GPOMDP variants: `sum_h c_h (sum_{t<=h} score_t) gamma^h r_h`
/// with `c_h = 1` or the importance weight. Sharing this routine makes the
/// unweighted and weighted estimates bit-identical when all weights are 1.
fn gpomdp_core<P: Policy>(
    traj: &Trajectory<P::Action>,
    policy: &P,
    theta: &[f64],
    gamma: f64,
    weights: Option<&[f64]>,
) -> Vec<f64> {
    let d = policy.dim();
    let mut cum = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut disc = 1.0;
    for (h, st) in traj.steps.iter().enumerate() {
        policy.add_score(theta, st.state, &st.action, 1.0, &mut cum);
        let mut c = disc * st.reward;
        if let Some(w) = weights {
            c *= w[h];
        }
        if c != 0.0 {
            for (gi, ci) in g.iter_mut().zip(&cum) {
                *gi += c * ci;
            }
        }
        disc *= gamma;
    }
    g
}

/// `g(tau | theta)`, the truncated GPOMDP estimate.
pub fn gpomdp_truncated<P: Policy>(
    traj: &Trajectory<P::Action>,
    policy: &P,
    theta: &[f64],
    gamma: f64,
) -> Result<GradEstimate> {
    policy.check_theta(theta)?;
    Ok(GradEstimate {
        g: gpomdp_core(traj, policy, theta, gamma, None),
        kind: EstimatorKind::Gpomdp,
        theta_at: theta.to_vec(),
        trajectories_used: 1,
    })
}

/// All prefix weights `w_{0:h}`, `h = 0..H`, accumulated in log space.
pub fn importance_weights<P: Policy>(
    traj: &Trajectory<P::Action>,
    policy: &P,
    theta_prev: &[f64],
    theta_cur: &[f64],
) -> Result<Vec<f64>> {
    policy.check_theta(theta_prev)?;
    policy.check_theta(theta_cur)?;
    let mut out = Vec::with_capacity(traj.len());
    let mut log_w = 0.0;
    for st in &traj.steps {
        log_w += log_ratio(policy, theta_prev, theta_cur, st.state, &st.action)?;
        out.push(log_w.exp());
    }
    Ok(out)
}

fn log_ratio<P: Policy>(
    policy: &P,
    theta_prev: &[f64],
    theta_cur: &[f64],
    s: usize,
    a: &P::Action,
) -> Result<f64> {
    let lc = policy.log_prob(theta_cur, s, a);
    if !lc.is_finite() {
        return Err(Error::ZeroProbability);
    }
    let lp = policy.log_prob(theta_prev, s, a);
    Ok(if theta_prev == theta_cur { 0.0 } else { lp - lc })
}

/// Single prefix weight `w_{0:h}`; recomputed in the same order as [`importance_weights`].
pub fn importance_weight<P: Policy>(
    traj: &Trajectory<P::Action>,
    policy: &P,
    theta_prev: &[f64],
    theta_cur: &[f64],
    h: usize,
) -> Result<f64> {
    if h >= traj.len() {
        return Err(Error::Config(format!("prefix {h} beyond horizon {}", traj.len())));
    }
    let mut log_w = 0.0;
    for st in &traj.steps[..=h] {
        log_w += log_ratio(policy, theta_prev, theta_cur, st.state, &st.action)?;
    }
    Ok(log_w.exp())
}

/// `g_w(tau | theta_prev, theta_cur)`: estimates the gradient at `theta_prev`
/// from a trajectory sampled at `theta_cur`.
pub fn gpomdp_weighted<P: Policy>(
    traj: &Trajectory<P::Action>,
    policy: &P,
    theta_prev: &[f64],
    theta_cur: &[f64],
    gamma: f64,
) -> Result<GradEstimate> {
    let w = importance_weights(traj, policy, theta_prev, theta_cur)?;
    Ok(GradEstimate {
        g: gpomdp_core(traj, policy, theta_prev, gamma, Some(&w)),
        kind: EstimatorKind::Weighted,
        theta_at: theta_prev.to_vec(),
        trajectories_used: 1,
    })
}

/// Per-trajectory correction `g(tau | theta_cur) - g_w(tau | theta_prev, theta_cur)`.
pub fn srvr_correction<P: Policy>(
    traj: &Trajectory<P::Action>,
    policy: &P,
    theta_prev: &[f64],
    theta_cur: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    let g = gpomdp_core(traj, policy, theta_cur, gamma, None);
    let w = importance_weights(traj, policy, theta_prev, theta_cur)?;
    let gw = gpomdp_core(traj, policy, theta_prev, gamma, Some(&w));
    Ok(g.iter().zip(&gw).map(|(a, b)| a - b).collect())
}

/// Sum vectors in the given order.
fn ordered_sum(vs: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    acc
}

/// `u_t = u_{t-1} + (1/B) sum_j (g(tau_j | theta_cur) - g_w(tau_j | theta_prev, theta_cur))`.
pub fn srvr_update<E, P>(
    sampler: &Sampler<'_, E, P>,
    u_prev: &GradEstimate,
    batch: &[Trajectory<P::Action>],
    theta_prev: &[f64],
    theta_cur: &[f64],
) -> Result<GradEstimate>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !u_prev.is_at(theta_prev) {
        return Err(Error::Provenance("previous estimate is not tagged at theta_prev".into()));
    }
    for t in batch {
        check_tag(t, theta_cur)?;
    }
    let policy = sampler.policy();
    let gamma = sampler.env().gamma();
    let corr: Vec<Result<Vec<f64>>> = sampler.map_lanes(batch.len(), |j| {
        srvr_correction(&batch[j], policy, theta_prev, theta_cur, gamma)
    });
    let corr: Vec<Vec<f64>> = corr.into_iter().collect::<Result<_>>()?;
    let sum = ordered_sum(&corr, policy.dim());
    let b = batch.len() as f64;
    let g = u_prev.g.iter().zip(&sum).map(|(u, c)| u + c / b).collect();
    Ok(GradEstimate {
        g,
        kind: EstimatorKind::SrvrRecursive,
        theta_at: theta_cur.to_vec(),
        trajectories_used: u_prev.trajectories_used + batch.len() as u64,
    })
}

/// Per-trajectory GPOMDP estimates of a batch, in batch order.
pub fn gpomdp_each<E, P>(
    sampler: &Sampler<'_, E, P>,
    batch: &[Trajectory<P::Action>],
    theta: &[f64],
) -> Result<Vec<Vec<f64>>>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    sampler.policy().check_theta(theta)?;
    for t in batch {
        check_tag(t, theta)?;
    }
    let (policy, gamma) = (sampler.policy(), sampler.env().gamma());
    Ok(sampler.map_lanes(batch.len(), |j| gpomdp_core(&batch[j], policy, theta, gamma, None)))
}

/// `(1/N) sum_i g(tau_i | theta)`.
pub fn batch_mean<E, P>(
    sampler: &Sampler<'_, E, P>,
    batch: &[Trajectory<P::Action>],
    theta: &[f64],
) -> Result<GradEstimate>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let each = gpomdp_each(sampler, batch, theta)?;
    let n = batch.len() as f64;
    let g = ordered_sum(&each, sampler.policy().dim()).into_iter().map(|x| x / n).collect();
    Ok(GradEstimate {
        g,
        kind: EstimatorKind::BatchMean,
        theta_at: theta.to_vec(),
        trajectories_used: batch.len() as u64,
    })
}

/// Parameters at which the moment probe samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentProbeSpec {
    pub thetas: Vec<Vec<f64>>,
    /// `(theta_1, theta_2)` pairs; trajectories are sampled at `theta_2`.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub horizon: usize,
    pub replications: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// Largest total variance `E|g - E g|^2` over probed parameters.
    pub sigma2_hat: f64,
    /// Largest importance-weight variance over probed pairs and prefixes.
    pub w_hat: f64,
    pub sample_count: u64,
    /// `(|theta_1 - theta_2|, max_h Var w_{0:h})` per probed pair.
    pub pair_variances: Vec<(f64, f64)>,
    /// Set when the weight variance of the farthest pair exceeds that of the nearest,
    /// i.e. the observed `W` depends on the probe range.
    pub w_grows_with_distance: bool,
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Empirical `Var(g)` and `Var(w_{0:h})` over the probe set.
pub fn moment_probe<E, P>(sampler: &Sampler<'_, E, P>, spec: &MomentProbeSpec) -> Result<MomentReport>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    if spec.replications < 2 {
        return Err(Error::TooFewReplications(spec.replications));
    }
    let n = spec.replications;
    let d = sampler.policy().dim();
    let mut sigma2_hat: f64 = 0.0;
    let mut count = 0u64;
    for theta in &spec.thetas {
        let batch = sampler.batch(theta, spec.horizon, n);
        let each = gpomdp_each(sampler, &batch, theta)?;
        let total: f64 = (0..d)
            .map(|i| sample_variance(&each.iter().map(|g| g[i]).collect::<Vec<_>>()))
            .sum();
        sigma2_hat = sigma2_hat.max(total);
        count += n as u64;
    }
    let mut pair_variances = Vec::with_capacity(spec.pairs.len());
    for (t1, t2) in &spec.pairs {
        let batch = sampler.batch(t2, spec.horizon, n);
        let ws: Vec<Vec<f64>> = batch
            .iter()
            .map(|t| importance_weights(t, sampler.policy(), t1, t2))
            .collect::<Result<_>>()?;
        let var = (0..spec.horizon)
            .map(|h| sample_variance(&ws.iter().map(|w| w[h]).collect::<Vec<_>>()))
            .fold(0.0, f64::max);
        let dist = norm(&t1.iter().zip(t2).map(|(a, b)| a - b).collect::<Vec<_>>());
        pair_variances.push((dist, var));
        count += n as u64;
    }
    let w_hat = pair_variances.iter().map(|p| p.1).fold(0.0, f64::max);
    let w_grows_with_distance = {
        let near = pair_variances.iter().min_by(|a, b| a.0.total_cmp(&b.0));
        let far = pair_variances.iter().max_by(|a, b| a.0.total_cmp(&b.0));
        matches!((near, far), (Some(n), Some(f)) if f.0 > n.0 && f.1 > n.1)
    };
    Ok(MomentReport { sigma2_hat, w_hat, sample_count: count, pair_variances, w_grows_with_distance })
}
