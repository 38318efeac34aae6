//! Exact gradient oracles for discrete families on tabular MDPs.

use crate::error::{Error, Result};
use crate::linalg::axpy;
use crate::mdp::{policy_evaluate, TabularMdp};

use super::DiscretePolicy;

/// Largest number of length-`H` state-action sequences enumerated by
/// [`exact_truncated_gradient`].
pub const ENUMERATION_BUDGET: f64 = 1e6;

fn check_compat<P: DiscretePolicy>(mdp: &TabularMdp, policy: &P, theta: &[f64]) -> Result<()> {
    policy.check_theta(theta)?;
    if policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions {
        return Err(Error::Incompatible(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states,
            mdp.n_actions
        )));
    }
    Ok(())
}

/// `pi_theta(a|s)` as a row-major `n_states x n_actions` table.
pub fn policy_table<P: DiscretePolicy>(policy: &P, theta: &[f64]) -> Vec<f64> {
    let na = policy.n_actions();
    let mut t = vec![0.0; policy.n_states() * na];
    for (s, row) in t.chunks_exact_mut(na).enumerate() {
        policy.probs_into(theta, s, row);
    }
    t
}

/// `grad J(theta) = 1/(1-gamma) E_{(s,a)~nu}[score(s,a) Q(s,a)]` from exact evaluation.
pub fn exact_policy_gradient<P: DiscretePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &[f64],
) -> Result<Vec<f64>> {
    check_compat(mdp, policy, theta)?;
    let ev = policy_evaluate(mdp, &policy_table(policy, theta))?;
    let na = mdp.n_actions;
    let mut g = vec![0.0; policy.dim()];
    let scale = 1.0 / (1.0 - mdp.gamma);
    for s in 0..mdp.n_states {
        for a in 0..na {
            let w = ev.nu_rho[s * na + a] * ev.q[s * na + a];
            if w != 0.0 {
                policy.add_score(theta, s, &a, scale * w, &mut g);
            }
        }
    }
    Ok(g)
}

/// `E[g(tau^H | theta)]` by brute-force enumeration of every length-`H`
/// trajectory weighted by `p^H_rho(tau | theta)`.
pub fn exact_truncated_gradient<P: DiscretePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    check_compat(mdp, policy, theta)?;
    if horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    let needed = ((mdp.n_states * mdp.n_actions) as f64).powi(horizon as i32);
    if needed > ENUMERATION_BUDGET {
        return Err(Error::EnumerationBudget { needed, budget: ENUMERATION_BUDGET });
    }
    let table = policy_table(policy, theta);
    let mut out = vec![0.0; policy.dim()];
    let cum = vec![0.0; policy.dim()];
    for s0 in 0..mdp.n_states {
        if mdp.rho[s0] > 0.0 {
            enumerate(mdp, policy, theta, &table, horizon, 0, s0, mdp.rho[s0], 1.0, &cum, &mut out);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn enumerate<P: DiscretePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &[f64],
    table: &[f64],
    horizon: usize,
    h: usize,
    s: usize,
    prob: f64,
    discount: f64,
    cum: &[f64],
    out: &mut [f64],
) {
    let na = mdp.n_actions;
    for a in 0..na {
        let pa = table[s * na + a];
        if pa == 0.0 {
            continue;
        }
        let p = prob * pa;
        let mut next_cum = cum.to_vec();
        policy.add_score(theta, s, &a, 1.0, &mut next_cum);
        axpy(p * discount * mdp.r(s, a), &next_cum, out);
        if h + 1 < horizon {
            for (next, &pn) in mdp.row(s, a).iter().enumerate() {
                if pn > 0.0 {
                    enumerate(
                        mdp, policy, theta, table, horizon, h + 1, next, p * pn,
                        discount * mdp.gamma, &next_cum, out,
                    );
                }
            }
        }
    }
}

struct Truncated {
    grad: Vec<f64>,
    value: f64,
}

fn truncated<P: DiscretePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &[f64],
    horizon: usize,
    want_grad: bool,
) -> Result<Truncated> {
    check_compat(mdp, policy, theta)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let table = policy_table(policy, theta);
    // q[k] is the k-step truncated Q, k = 0..=H (q[0] = 0).
    let mut q = vec![vec![0.0; ns * na]; horizon + 1];
    let mut v_prev = vec![0.0; ns];
    for k in 1..=horizon {
        let mut v = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp.row(s, a).iter().zip(&v_prev).map(|(p, x)| p * x).sum();
                let qk = mdp.r(s, a) + mdp.gamma * ev;
                q[k][s * na + a] = qk;
                v[s] += table[s * na + a] * qk;
            }
        }
        v_prev = v;
    }
    let value = mdp.rho.iter().zip(&v_prev).map(|(p, x)| p * x).sum();
    let mut grad = vec![0.0; policy.dim()];
    if want_grad {
        let mut mu = mdp.rho.clone();
        let mut discount = 1.0;
        for t in 0..horizon {
            let qk = &q[horizon - t];
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                if mu[s] == 0.0 {
                    continue;
                }
                for a in 0..na {
                    let w = mu[s] * table[s * na + a];
                    if w == 0.0 {
                        continue;
                    }
                    policy.add_score(theta, s, &a, discount * w * qk[s * na + a], &mut grad);
                    for (n, pn) in next.iter_mut().zip(mdp.row(s, a)) {
                        *n += w * pn;
                    }
                }
            }
            mu = next;
            discount *= mdp.gamma;
        }
    }
    Ok(Truncated { grad, value })
}

/// `grad J^H(theta)` by a forward (state marginals) / backward (truncated Q)
/// recursion. Exact like [`exact_truncated_gradient`] but linear in `H`.
pub fn truncated_gradient<P: DiscretePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    Ok(truncated(mdp, policy, theta, horizon, true)?.grad)
}

/// `J^H(theta) = E[sum_{t<H} gamma^t r_t]`.
pub fn truncated_return<P: DiscretePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &[f64],
    horizon: usize,
) -> Result<f64> {
    Ok(truncated(mdp, policy, theta, horizon, false)?.value)
}
