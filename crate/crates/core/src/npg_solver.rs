//! Compatible function approximation: exact damped Fisher solves and the two
//! averaged-SGD subproblem solvers.
//!
//! The SGD objective is `l(w) = 1/(2(1-gamma)^2) L_nu(w)` with
//! `L_nu(w) = E_nu[(A(s,a) - (1-gamma) w^T score(s,a))^2]`, whose gradient is
//! `F w - grad J`. Its minimizer is therefore the natural gradient
//! direction `F^{-1} grad J`, and the driver update is `theta += eta * w`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Environment};
use crate::error::{Error, Result};
use crate::estimators::GradEstimate;
use crate::linalg::{dot, mat_vec, norm, spd_solve};
use crate::policy::{DiscretePolicy, FisherMatrix, Policy};
use crate::sampler::{estimate_advantage, sample_nu, Sampler};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub iterations: usize,
    /// Defaults to `1/(4 G^2)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stepsize: Option<f64>,
}

impl SgdConfig {
    pub fn new(iterations: usize) -> Self {
        Self { iterations, stepsize: None }
    }

    pub fn alpha(&self, g_bound: f64) -> f64 {
        self.stepsize.unwrap_or(1.0 / (4.0 * g_bound * g_bound))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("sgd iterations must be >= 1".into()));
        }
        if let Some(a) = self.stepsize {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("sgd stepsize {a} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpgKind {
    ExactDamped,
    SgdProcedure1,
    SgdProcedure2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpgDirection {
    pub w: Vec<f64>,
    pub kind: NpgKind,
    pub residual_estimate: Option<f64>,
    pub trajectories_used: u64,
}

/// `L_nu(w) = sum nu(s,a) (A(s,a) - (1-gamma) w^T score(s,a))^2`.
pub fn compatible_loss<P: DiscretePolicy>(
    policy: &P,
    theta: &[f64],
    nu: &[f64],
    adv: &[f64],
    w: &[f64],
    gamma: f64,
) -> Result<f64> {
    policy.check_theta(theta)?;
    policy.check_theta(w)?;
    let na = policy.n_actions();
    let mut loss = 0.0;
    for s in 0..policy.n_states() {
        for a in 0..na {
            let p = nu[s * na + a];
            if p == 0.0 {
                continue;
            }
            let e = adv[s * na + a] - (1.0 - gamma) * dot(w, &policy.score(theta, s, &a));
            loss += p * e * e;
        }
    }
    Ok(loss)
}

/// Exact gradient of the SGD objective, `E_nu[(w^T score - A/(1-gamma)) score]`.
pub fn sgd_objective_grad<P: DiscretePolicy>(
    policy: &P,
    theta: &[f64],
    nu: &[f64],
    adv: &[f64],
    w: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    policy.check_theta(theta)?;
    let na = policy.n_actions();
    let mut g = vec![0.0; policy.dim()];
    for s in 0..policy.n_states() {
        for a in 0..na {
            let p = nu[s * na + a];
            if p == 0.0 {
                continue;
            }
            let sc = policy.score(theta, s, &a);
            let c = dot(w, &sc) - adv[s * na + a] / (1.0 - gamma);
            policy.add_score(theta, s, &a, p * c, &mut g);
        }
    }
    Ok(g)
}

/// Solve `(F + lambda I) w = target` by Cholesky with up to two refinement steps.
pub fn exact_npg_direction(f: &FisherMatrix, target: &[f64], lambda: f64) -> Result<NpgDirection> {
    let d = f.dim();
    if target.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.len() });
    }
    let a: DMatrix<f64> = &f.f + DMatrix::<f64>::identity(d, d) * lambda;
    let tn = norm(target);
    if tn == 0.0 {
        return Ok(NpgDirection { w: vec![0.0; d], kind: NpgKind::ExactDamped, residual_estimate: Some(0.0), trajectories_used: 0 });
    }
    let mut w = spd_solve(a.clone(), target, lambda)?;
    let residual = |w: &[f64]| -> Vec<f64> {
        mat_vec(&a, w).iter().zip(target).map(|(x, t)| t - x).collect()
    };
    let mut r = residual(&w);
    for _ in 0..2 {
        if norm(&r) <= 1e-10 * tn {
            break;
        }
        let dw = spd_solve(a.clone(), &r, lambda)?;
        for (wi, di) in w.iter_mut().zip(&dw) {
            *wi += di;
        }
        r = residual(&w);
    }
    let rn = norm(&r);
    if rn > 1e-10 * tn {
        return Err(Error::Singular(format!("residual {rn:e} after refinement (lambda {lambda:e})")));
    }
    Ok(NpgDirection { w, kind: NpgKind::ExactDamped, residual_estimate: Some(rn), trajectories_used: 0 })
}

/// Where Procedure-1 SGD gets its advantage values.
#[derive(Clone, Copy, Debug)]
pub enum AdvantageSource<'a> {
    /// Two independent rollouts of the given length per draw.
    Sampled { h_adv: usize },
    /// Row-major `A(s,a)` table from an exact oracle (discrete actions only).
    Exact(&'a [f64]),
}

/// Procedure 1: averaged SGD on `l(w)` with `(s,a) ~ nu` and advantage estimates.
/// Each SGD iteration is charged as one trajectory.
pub fn npg_sgd<E, P>(
    sampler: &Sampler<'_, E, P>,
    theta: &[f64],
    cfg: &SgdConfig,
    g_bound: f64,
    adv: AdvantageSource<'_>,
) -> Result<NpgDirection>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    cfg.validate()?;
    let (env, policy) = (sampler.env(), sampler.policy());
    policy.check_theta(theta)?;
    let n_actions = match adv {
        AdvantageSource::Exact(table) => {
            let na = table.len() / env.n_states().max(1);
            if na * env.n_states() != table.len() || na == 0 {
                return Err(Error::DimensionMismatch { expected: env.n_states(), got: table.len() });
            }
            na
        }
        AdvantageSource::Sampled { h_adv: 0 } => {
            return Err(Error::Config("h_adv must be >= 1".into()))
        }
        AdvantageSource::Sampled { .. } => 0,
    };
    let gamma = env.gamma();
    let alpha = cfg.alpha(g_bound);
    let d = policy.dim();
    let mut rng = sampler.sequential_rng();
    let (mut w, mut avg, mut psi) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for _ in 0..cfg.iterations {
        let (s, a, _) = sample_nu(env, policy, theta, &mut rng);
        let a_hat = match adv {
            AdvantageSource::Exact(table) => {
                let ai = a.discrete_index().ok_or_else(|| {
                    Error::Incompatible("exact advantages need discrete actions".into())
                })?;
                table[s * n_actions + ai]
            }
            AdvantageSource::Sampled { h_adv } => {
                estimate_advantage(env, policy, theta, s, &a, h_adv, &mut rng)
            }
        };
        psi.iter_mut().for_each(|x| *x = 0.0);
        policy.add_score(theta, s, &a, 1.0, &mut psi);
        let c = dot(&w, &psi) - a_hat / (1.0 - gamma);
        for i in 0..d {
            w[i] -= alpha * c * psi[i];
            avg[i] += w[i];
        }
    }
    let t = cfg.iterations as f64;
    avg.iter_mut().for_each(|x| *x /= t);
    sampler.charge_external(cfg.iterations as u64);
    Ok(NpgDirection { w: avg, kind: NpgKind::SgdProcedure1, residual_estimate: None, trajectories_used: cfg.iterations as u64 })
}

/// Procedure 2: averaged SGD towards `F^{-1} u` with stochastic gradient
/// `(w^T score) score - u`. Each SGD iteration is charged as one trajectory.
pub fn srvr_npg_sgd<E, P>(
    sampler: &Sampler<'_, E, P>,
    theta: &[f64],
    u: &GradEstimate,
    cfg: &SgdConfig,
    g_bound: f64,
) -> Result<NpgDirection>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    cfg.validate()?;
    if !u.is_at(theta) {
        return Err(Error::Provenance("subproblem target is not tagged at theta".into()));
    }
    let (env, policy) = (sampler.env(), sampler.policy());
    policy.check_theta(theta)?;
    let alpha = cfg.alpha(g_bound);
    let d = policy.dim();
    let mut rng = sampler.sequential_rng();
    let (mut w, mut avg, mut psi) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for _ in 0..cfg.iterations {
        let (s, a, _) = sample_nu(env, policy, theta, &mut rng);
        psi.iter_mut().for_each(|x| *x = 0.0);
        policy.add_score(theta, s, &a, 1.0, &mut psi);
        let c = dot(&w, &psi);
        for i in 0..d {
            w[i] -= alpha * (c * psi[i] - u.g[i]);
            avg[i] += w[i];
        }
    }
    let t = cfg.iterations as f64;
    avg.iter_mut().for_each(|x| *x /= t);
    sampler.charge_external(cfg.iterations as u64);
    Ok(NpgDirection { w: avg, kind: NpgKind::SgdProcedure2, residual_estimate: None, trajectories_used: cfg.iterations as u64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{chain2, policy_evaluate};
    use crate::policy::{exact_policy_gradient, fisher_exact, policy_table, SoftmaxTabular};

    #[test]
    fn identity_preconditioner() {
        let f = FisherMatrix::from_matrix(DMatrix::identity(3, 3), None);
        let d = exact_npg_direction(&f, &[1.0, -2.0, 0.5], 0.0).unwrap();
        assert_eq!(d.w, vec![1.0, -2.0, 0.5]);
        let z = exact_npg_direction(&f, &[0.0; 3], 0.0).unwrap();
        assert_eq!(z.w, vec![0.0; 3]);
        let sing = FisherMatrix::from_matrix(DMatrix::zeros(2, 2), None);
        assert!(matches!(exact_npg_direction(&sing, &[1.0, 0.0], 0.0), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn loss_at_zero_and_gradient_identity() {
        let m = chain2();
        let p = SoftmaxTabular::new(2, 2);
        let theta = [0.3, -0.1, 0.2, 0.5];
        let ev = policy_evaluate(&m, &policy_table(&p, &theta)).unwrap();
        let l0 = compatible_loss(&p, &theta, &ev.nu_rho, &ev.adv, &[0.0; 4], m.gamma).unwrap();
        let ea2: f64 = ev.nu_rho.iter().zip(&ev.adv).map(|(n, a)| n * a * a).sum();
        assert!((l0 - ea2).abs() < 1e-12);
        // grad l(w) = F w - grad J
        let w = [0.2, -0.7, 1.1, 0.4];
        let g = sgd_objective_grad(&p, &theta, &ev.nu_rho, &ev.adv, &w, m.gamma).unwrap();
        let f = fisher_exact(&p, &theta, &ev.nu_rho).unwrap();
        let gj = exact_policy_gradient(&m, &p, &theta).unwrap();
        let fw = mat_vec(&f.f, &w);
        for i in 0..4 {
            assert!((g[i] - (fw[i] - gj[i])).abs() < 1e-10);
        }
    }
}
