//! Exact quantities on tabular MDPs, behind an object-safe interface so the
//! drivers can log them without knowing the policy family.

use crate::error::Result;
use crate::linalg::dot;
use crate::mdp::{policy_evaluate, value_iteration, DpSolution, PolicyEvaluation, TabularMdp, DEFAULT_VI_TOL};
use crate::npg_solver::exact_npg_direction;
use crate::policy::{
    exact_policy_gradient, fisher_exact, policy_table, truncated_gradient, truncated_return,
    DiscretePolicy, FisherMatrix,
};

/// `J`, `grad J` and the damped natural direction at one parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub j: f64,
    pub grad: Vec<f64>,
    pub w_star: Vec<f64>,
}

pub trait ExactOracle: Sync {
    fn dim(&self) -> usize;
    fn gamma(&self) -> f64;
    fn j_star(&self) -> f64;
    /// Damping used for `w* = (F + lambda I)^{-1} grad J`.
    fn lambda(&self) -> f64;
    fn j(&self, theta: &[f64]) -> Result<f64>;
    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>>;
    fn truncated_j(&self, theta: &[f64], horizon: usize) -> Result<f64>;
    fn truncated_grad(&self, theta: &[f64], horizon: usize) -> Result<Vec<f64>>;
    /// Fisher information under `nu_rho^theta`.
    fn fisher(&self, theta: &[f64]) -> Result<FisherMatrix>;
    /// `(F(theta) + lambda I)^{-1} target`.
    fn solve_fisher(&self, theta: &[f64], target: &[f64], lambda: f64) -> Result<Vec<f64>>;
    fn advantage_table(&self, theta: &[f64]) -> Result<Vec<f64>>;
    /// `L_{nu*}(w*; theta)` with the damped `w*`.
    fn transferred_error(&self, theta: &[f64]) -> Result<f64>;
    /// `E_{s ~ d*}[KL(pi*(.|s) || pi_theta(.|s))]`.
    fn kl_to_opt(&self, theta: &[f64]) -> Result<f64>;
    fn snapshot(&self, theta: &[f64]) -> Result<Snapshot>;
}

pub struct TabularOracle<'a, P> {
    mdp: &'a TabularMdp,
    policy: &'a P,
    dp: DpSolution,
    star: PolicyEvaluation,
    lambda: f64,
}

impl<'a, P: DiscretePolicy> TabularOracle<'a, P> {
    pub fn new(mdp: &'a TabularMdp, policy: &'a P, lambda: f64) -> Result<Self> {
        let dp = value_iteration(mdp, DEFAULT_VI_TOL)?;
        let star = policy_evaluate(mdp, &dp.policy_table(mdp.n_actions))?;
        // check compatibility once up front
        exact_policy_gradient(mdp, policy, &vec![0.0; policy.dim()])?;
        Ok(Self { mdp, policy, dp, star, lambda })
    }

    pub fn mdp(&self) -> &TabularMdp {
        self.mdp
    }

    pub fn dp(&self) -> &DpSolution {
        &self.dp
    }

    /// `nu*(s,a) = d^{pi*}(s) pi*(a|s)`.
    pub fn nu_star(&self) -> &[f64] {
        &self.star.nu_rho
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<PolicyEvaluation> {
        self.policy.check_theta(theta)?;
        policy_evaluate(self.mdp, &policy_table(self.policy, theta))
    }

    fn grad_from(&self, theta: &[f64], ev: &PolicyEvaluation) -> Vec<f64> {
        let na = self.mdp.n_actions;
        let scale = 1.0 / (1.0 - self.mdp.gamma);
        let mut g = vec![0.0; self.policy.dim()];
        for s in 0..self.mdp.n_states {
            for a in 0..na {
                let w = ev.nu_rho[s * na + a] * ev.q[s * na + a];
                if w != 0.0 {
                    self.policy.add_score(theta, s, &a, scale * w, &mut g);
                }
            }
        }
        g
    }

    /// `w*` and the transferred error for a precomputed evaluation.
    fn w_star_from(&self, theta: &[f64], ev: &PolicyEvaluation, grad: &[f64]) -> Result<Vec<f64>> {
        let f = fisher_exact(self.policy, theta, &ev.nu_rho)?;
        Ok(exact_npg_direction(&f, grad, self.lambda)?.w)
    }
}

impl<P: DiscretePolicy> ExactOracle for TabularOracle<'_, P> {
    fn dim(&self) -> usize {
        self.policy.dim()
    }

    fn gamma(&self) -> f64 {
        self.mdp.gamma
    }

    fn j_star(&self) -> f64 {
        self.dp.j_star
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn j(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.evaluate(theta)?.j)
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let ev = self.evaluate(theta)?;
        Ok(self.grad_from(theta, &ev))
    }

    fn truncated_j(&self, theta: &[f64], horizon: usize) -> Result<f64> {
        truncated_return(self.mdp, self.policy, theta, horizon)
    }

    fn truncated_grad(&self, theta: &[f64], horizon: usize) -> Result<Vec<f64>> {
        truncated_gradient(self.mdp, self.policy, theta, horizon)
    }

    fn fisher(&self, theta: &[f64]) -> Result<FisherMatrix> {
        let ev = self.evaluate(theta)?;
        fisher_exact(self.policy, theta, &ev.nu_rho)
    }

    fn solve_fisher(&self, theta: &[f64], target: &[f64], lambda: f64) -> Result<Vec<f64>> {
        let f = self.fisher(theta)?;
        Ok(exact_npg_direction(&f, target, lambda)?.w)
    }

    fn advantage_table(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(theta)?.adv)
    }

    fn transferred_error(&self, theta: &[f64]) -> Result<f64> {
        let ev = self.evaluate(theta)?;
        let grad = self.grad_from(theta, &ev);
        let w = self.w_star_from(theta, &ev, &grad)?;
        let na = self.mdp.n_actions;
        let mut loss = 0.0;
        for s in 0..self.mdp.n_states {
            for a in 0..na {
                let p = self.star.nu_rho[s * na + a];
                if p == 0.0 {
                    continue;
                }
                let e = ev.adv[s * na + a]
                    - (1.0 - self.mdp.gamma) * dot(&w, &self.policy.score(theta, s, &a));
                loss += p * e * e;
            }
        }
        Ok(loss)
    }

    fn kl_to_opt(&self, theta: &[f64]) -> Result<f64> {
        self.policy.check_theta(theta)?;
        let mut kl = 0.0;
        for (s, &a_star) in self.dp.pi_star.iter().enumerate() {
            let d = self.star.d_rho[s];
            if d > 0.0 {
                kl -= d * self.policy.log_prob(theta, s, &a_star);
            }
        }
        Ok(kl)
    }

    fn snapshot(&self, theta: &[f64]) -> Result<Snapshot> {
        let ev = self.evaluate(theta)?;
        let grad = self.grad_from(theta, &ev);
        let w_star = self.w_star_from(theta, &ev, &grad)?;
        Ok(Snapshot { j: ev.j, grad, w_star })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, sub};
    use crate::mdp::chain2;
    use crate::policy::SoftmaxTabular;

    #[test]
    fn oracle_agrees_with_free_functions() {
        let m = chain2();
        let p = SoftmaxTabular::new(2, 2);
        let o = TabularOracle::new(&m, &p, 1e-6).unwrap();
        let theta = [0.1, 0.4, -0.3, 0.2];
        let g = exact_policy_gradient(&m, &p, &theta).unwrap();
        assert!(norm(&sub(&o.grad(&theta).unwrap(), &g)) < 1e-14);
        let snap = o.snapshot(&theta).unwrap();
        assert_eq!(snap.grad, o.grad(&theta).unwrap());
        assert!((o.j_star() - 9.0).abs() < 1e-8);
        // uniform policy: KL = -log(1/2) under any d*
        assert!((o.kl_to_opt(&[0.0; 4]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        // tabular softmax is complete: transferred error only reflects damping
        assert!(o.transferred_error(&theta).unwrap() < 1e-4);
    }
}
