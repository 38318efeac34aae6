//! Problem constants, the global-gap decomposition of a finished run, and
//! audits of the truncation and performance-difference identities.

use serde::{Deserialize, Serialize};

use crate::algorithms::RunResult;
use crate::error::{Error, Result};
use crate::estimators::{moment_probe, MomentProbeSpec};
use crate::linalg::{dot, norm, norm2, sub};
use crate::mdp::TabularMdp;
use crate::oracle::{ExactOracle, TabularOracle};
use crate::policy::{
    constants_probe, exact_policy_gradient, exact_truncated_gradient, truncated_gradient,
    DiscretePolicy, ProbeSpec, ENUMERATION_BUDGET,
};
use crate::rng::RngStream;
use crate::sampler::Sampler;

/// `L_J = M R / (1-gamma)^2 + 2 G^2 R / (1-gamma)^3`.
pub fn l_j_formula(g: f64, m: f64, r: f64, gamma: f64) -> f64 {
    m * r / (1.0 - gamma).powi(2) + 2.0 * g * g * r / (1.0 - gamma).powi(3)
}

/// `C_gamma = 24 R G^2 (2 G^2 + M)(W + 1) gamma / (1-gamma)^5`.
pub fn c_gamma_formula(r: f64, g: f64, m: f64, w: f64, gamma: f64) -> f64 {
    24.0 * r * g * g * (2.0 * g * g + m) * (w + 1.0) * gamma / (1.0 - gamma).powi(5)
}

/// `G R ((H+1)/(1-gamma) + gamma/(1-gamma)^2) gamma^H`.
pub fn truncation_bound(g: f64, r: f64, gamma: f64, h: usize) -> f64 {
    let hf = h as f64;
    g * r * ((hf + 1.0) / (1.0 - gamma) + gamma / (1.0 - gamma).powi(2)) * gamma.powi(h as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub g: f64,
    pub m: f64,
    pub r: f64,
    pub gamma: f64,
    /// Largest score norm / score-Lipschitz ratio actually observed on the probe.
    pub g_observed: f64,
    pub m_observed: f64,
    /// Whether `g`, `m` are the family's analytic bounds or probe maxima.
    pub analytic_gm: bool,
    pub sigma2_hat: Option<f64>,
    pub w_hat: Option<f64>,
    pub w_grows_with_distance: bool,
    /// Smallest restricted Fisher eigenvalue over the probe (undamped).
    pub mu_f: f64,
    /// Smallest raw Fisher eigenvalue over the probe (undamped).
    pub lambda_min: f64,
    /// Damping used for `w*` and the transferred error.
    pub damping: f64,
    pub l_j: f64,
    pub c_gamma: Option<f64>,
    /// Largest transferred error over the probe parameters.
    pub eps_bias: Option<f64>,
    pub j_star: Option<f64>,
    pub j0: Option<f64>,
    pub kl_init: Option<f64>,
}

impl ConstantsReport {
    /// Report from `G, M, R, gamma` only; every probe-derived field empty.
    pub fn from_bounds(g: f64, m: f64, r: f64, gamma: f64) -> Self {
        Self {
            g,
            m,
            r,
            gamma,
            g_observed: g,
            m_observed: m,
            analytic_gm: true,
            sigma2_hat: None,
            w_hat: None,
            w_grows_with_distance: false,
            mu_f: 0.0,
            lambda_min: 0.0,
            damping: 0.0,
            l_j: l_j_formula(g, m, r, gamma),
            c_gamma: None,
            eps_bias: None,
            j_star: None,
            j0: None,
            kl_init: None,
        }
    }

    /// The derived constants equal their formulas applied to the stored inputs.
    pub fn formulas_consistent(&self) -> bool {
        let lj = l_j_formula(self.g, self.m, self.r, self.gamma);
        let cg = self.w_hat.map(|w| c_gamma_formula(self.r, self.g, self.m, w, self.gamma));
        lj.to_bits() == self.l_j.to_bits() && cg.map(f64::to_bits) == self.c_gamma.map(f64::to_bits)
    }
}

/// Where the constants are probed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsProbe {
    pub thetas: Vec<Vec<f64>>,
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub horizon: usize,
    /// Replications per moment probe; below 2 skips the variance probes.
    pub replications: usize,
    pub seed: u64,
}

impl ConstantsProbe {
    /// `theta0` plus `extra` random parameters in `[-scale, scale]^d`; weight
    /// pairs join consecutive probe points.
    pub fn around(theta0: &[f64], extra: usize, scale: f64, horizon: usize, replications: usize, seed: u64) -> Self {
        let mut rng = RngStream::new(seed).child(0xc0de).lane(0, 0);
        let mut thetas = vec![theta0.to_vec()];
        for _ in 0..extra {
            use rand::Rng;
            thetas.push(theta0.iter().map(|t| t + scale * rng.random_range(-1.0..1.0)).collect());
        }
        let pairs = thetas.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
        Self { thetas, pairs, horizon, replications, seed }
    }
}

/// Fill a [`ConstantsReport`] for a discrete family on a tabular MDP.
pub fn compute_constants<P: DiscretePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    theta0: &[f64],
    probe: &ConstantsProbe,
    lambda: f64,
) -> Result<ConstantsReport> {
    if probe.thetas.is_empty() {
        return Err(Error::EmptyProbe);
    }
    let sc = constants_probe(policy, &ProbeSpec::all_pairs(policy, probe.thetas.clone()))?;
    let (g, m) = (sc.g(), sc.m());
    let (r, gamma) = (mdp.reward_bound, mdp.gamma);
    let oracle = TabularOracle::new(mdp, policy, lambda)?;
    let mut mu_f = f64::INFINITY;
    let mut lambda_min = f64::INFINITY;
    let mut eps_bias: f64 = 0.0;
    for th in &probe.thetas {
        let f = oracle.fisher(th)?;
        mu_f = mu_f.min(f.mu_f_estimate);
        lambda_min = lambda_min.min(f.lambda_min);
        eps_bias = eps_bias.max(oracle.transferred_error(th)?);
    }
    let (sigma2_hat, w_hat, grows) = if probe.replications >= 2 {
        let sampler = Sampler::new(mdp, policy, probe.seed);
        let spec = MomentProbeSpec {
            thetas: probe.thetas.clone(),
            pairs: probe.pairs.clone(),
            horizon: probe.horizon,
            replications: probe.replications,
        };
        let rep = moment_probe(&sampler, &spec)?;
        let w = (!probe.pairs.is_empty()).then_some(rep.w_hat);
        (Some(rep.sigma2_hat), w, rep.w_grows_with_distance)
    } else {
        (None, None, false)
    };
    Ok(ConstantsReport {
        g,
        m,
        r,
        gamma,
        g_observed: sc.g_observed,
        m_observed: sc.m_observed,
        analytic_gm: sc.g_analytic.is_some(),
        sigma2_hat,
        w_hat,
        w_grows_with_distance: grows,
        mu_f,
        lambda_min,
        damping: lambda,
        l_j: l_j_formula(g, m, r, gamma),
        c_gamma: w_hat.map(|w| c_gamma_formula(r, g, m, w, gamma)),
        eps_bias: Some(eps_bias),
        j_star: Some(oracle.j_star()),
        j0: Some(oracle.j(theta0)?),
        kl_init: Some(oracle.kl_to_opt(theta0)?),
    })
}

/// The four right-hand-side terms of the global-gap bound, evaluated on a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapDecomposition {
    pub k: usize,
    pub eta: f64,
    /// `J* - (1/K) sum_k J(theta_k)`.
    pub lhs: f64,
    /// `sqrt(eps_bias) / (1-gamma)`, `eps_bias = max_k L_{nu*}(w*_k; theta_k)`.
    pub term_bias: f64,
    /// `KL_init / (eta K)`.
    pub term_kl: f64,
    /// `(M eta / 2K) sum_k |w_k|^2`.
    pub term_w2: f64,
    /// `(G/K) sum_k |w_k - w*_k|`.
    pub term_werr: f64,
    pub rhs: f64,
    pub slack: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub eps_bias: f64,
    pub kl_init: f64,
    pub dominant: String,
}

/// Evaluate the global-gap bound on every update of `run`.
///
/// `w*_k` is the damped natural direction at the oracle's damping; the bound
/// holds pathwise for that choice because `eps_bias` is measured with it.
pub fn decompose_global_bound(run: &RunResult, oracle: &dyn ExactOracle, g: f64, m: f64) -> Result<GapDecomposition> {
    let updates: Vec<_> = run.records.iter().filter(|r| r.w.is_some()).collect();
    let k = updates.len();
    if k == 0 {
        return Err(Error::Config("run has no updates to audit".into()));
    }
    let eta = run.config.eta;
    let gamma = oracle.gamma();
    let (mut sum_j, mut sum_w2, mut sum_werr, mut eps_bias) = (0.0, 0.0, 0.0, 0.0f64);
    for rec in &updates {
        let w = rec.w.as_ref().unwrap();
        let snap = oracle.snapshot(&rec.theta)?;
        sum_j += snap.j;
        sum_w2 += norm2(w);
        sum_werr += norm(&sub(w, &snap.w_star));
        eps_bias = eps_bias.max(oracle.transferred_error(&rec.theta)?);
    }
    let kf = k as f64;
    let kl_init = oracle.kl_to_opt(&updates[0].theta)?;
    let lhs = oracle.j_star() - sum_j / kf;
    let term_bias = eps_bias.sqrt() / (1.0 - gamma);
    let term_kl = kl_init / (eta * kf);
    let term_w2 = m * eta / (2.0 * kf) * sum_w2;
    let term_werr = g / kf * sum_werr;
    let rhs = term_bias + term_kl + term_w2 + term_werr;
    let tolerance = 1e-6 * lhs.abs() + 1e-9;
    let slack = rhs - lhs;
    let terms = [("bias", term_bias), ("kl", term_kl), ("w2", term_w2), ("werr", term_werr)];
    let dominant = terms.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0.to_string();
    Ok(GapDecomposition {
        k,
        eta,
        lhs,
        term_bias,
        term_kl,
        term_w2,
        term_werr,
        rhs,
        slack,
        tolerance,
        passed: slack >= -tolerance,
        eps_bias,
        kl_init,
        dominant,
    })
}

/// `|E_{nu*}[A^theta] - (1-gamma)(J* - J(theta))|`.
pub fn perf_diff_check<P: DiscretePolicy>(oracle: &TabularOracle<'_, P>, theta: &[f64]) -> Result<f64> {
    let ev = oracle.evaluate(theta)?;
    let lhs = dot(oracle.nu_star(), &ev.adv);
    let rhs = (1.0 - oracle.mdp().gamma) * (oracle.j_star() - ev.j);
    Ok((lhs - rhs).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub h: usize,
    pub measured: f64,
    pub bound: f64,
    pub enumerated: bool,
    pub ok: bool,
}

/// `|grad J^H - grad J|` against its bound for each `H`. Horizons within the
/// enumeration budget use brute force, longer ones the exact recursion.
pub fn audit_truncation<P: DiscretePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &[f64],
    horizons: impl IntoIterator<Item = usize>,
    g: f64,
) -> Result<Vec<TruncationRow>> {
    let full = exact_policy_gradient(mdp, policy, theta)?;
    // both gradients carry roundoff; past this floor the comparison is noise
    let floor = 1e-13 * norm(&full).max(1.0);
    let branching = (mdp.n_states * mdp.n_actions) as f64;
    horizons
        .into_iter()
        .map(|h| {
            let enumerated = branching.powi(h as i32) <= ENUMERATION_BUDGET;
            let gh = if enumerated {
                exact_truncated_gradient(mdp, policy, theta, h)?
            } else {
                truncated_gradient(mdp, policy, theta, h)?
            };
            let measured = norm(&sub(&gh, &full));
            let bound = truncation_bound(g, mdp.reward_bound, mdp.gamma, h);
            Ok(TruncationRow { h, measured, bound, enumerated, ok: measured <= bound + floor })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub label: String,
    pub decomposition: GapDecomposition,
}

/// Audit report: constants, per-run decompositions and truncation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub constants: ConstantsReport,
    pub runs: Vec<RunAudit>,
    pub truncation: Vec<TruncationRow>,
    pub passed: bool,
}

impl AuditReport {
    pub fn new(constants: ConstantsReport, runs: Vec<RunAudit>, truncation: Vec<TruncationRow>) -> Self {
        let passed = runs.iter().all(|r| r.decomposition.passed) && truncation.iter().all(|t| t.ok);
        Self { schema_version: 1, constants, runs, truncation, passed }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("audit serializes")
    }
}
