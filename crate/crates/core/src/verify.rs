//! The acceptance suite: each criterion is a function returning a
//! pass/fail line with the measured numbers.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{default_horizon, run, Algorithm, RunConfig, RunResult};
use crate::analysis::{
    audit_truncation, compute_constants, decompose_global_bound, perf_diff_check, AuditReport,
    ConstantsProbe, ConstantsReport, RunAudit,
};
use crate::error::Result;
use crate::estimators::{
    batch_mean, gpomdp_truncated, gpomdp_weighted, moment_probe, srvr_update, GradEstimate,
    MomentProbeSpec,
};
use crate::linalg::{dot, norm, norm2, sub};
use crate::mdp::{chain2, policy_evaluate, random_mdp, TabularMdp};
use crate::npg_solver::{npg_sgd, srvr_npg_sgd, AdvantageSource, SgdConfig};
use crate::oracle::{ExactOracle, TabularOracle};
use crate::policy::{
    exact_truncated_gradient, policy_table, DiscreteFamily, DiscretePolicy, Policy, SoftmaxLinear,
    SoftmaxTabular,
};
use crate::rng::RngStream;
use crate::sampler::{Sampler, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Fast,
    Full,
}

impl std::str::FromStr for Level {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Self::Fast),
            "full" => Ok(Self::Full),
            _ => Err(crate::Error::Config(format!("unknown level {s:?} (fast|full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] criterion {} ({}): {} [{:.1}s]", self.id, self.name, self.detail, self.seconds)
    }
}

#[cfg(not(target_arch = "wasm32"))]
fn timed<F: FnOnce() -> Result<(bool, String)>>(id: u32, name: &str, f: F) -> CriterionResult {
    let t = std::time::Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult { id, name: name.into(), passed, detail, seconds: t.elapsed().as_secs_f64() }
}

#[cfg(target_arch = "wasm32")]
fn timed<F: FnOnce() -> Result<(bool, String)>>(id: u32, name: &str, f: F) -> CriterionResult {
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult { id, name: name.into(), passed, detail, seconds: 0.0 }
}

/// Chain2 and two random 5-state, 3-action MDPs.
pub fn benchmark_mdps() -> Vec<(String, TabularMdp)> {
    vec![
        ("chain2".into(), chain2()),
        ("random5_a".into(), random_mdp(101, 5, 3).expect("valid")),
        ("random5_b".into(), random_mdp(202, 5, 3).expect("valid")),
    ]
}

fn random_vec<R: Rng>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

fn unit_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let v = random_vec(rng, d, 1.0);
    let n = norm(&v);
    v.iter().map(|x| x / n).collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Coordinatewise running mean / variance.
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; d], m2: vec![0.0; d] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    fn variance(&self) -> Vec<f64> {
        self.m2.iter().map(|m| m / (self.n - 1.0)).collect()
    }

    fn std_err(&self) -> Vec<f64> {
        self.variance().iter().map(|v| (v / self.n).sqrt()).collect()
    }

    /// Largest `|mean - target| / (3 SE + 1e-12)`; at most 1 means within tolerance.
    fn worst_ratio(&self, target: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(self.std_err())
            .zip(target)
            .map(|((m, se), t)| (m - t).abs() / (3.0 * se + 1e-12))
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// 1. oracle correctness

pub fn criterion_1(_level: Level) -> CriterionResult {
    timed(1, "oracle correctness", || {
        let mut rng = RngStream::new(1).lane(0, 0);
        let (mut worst_fd, mut worst_pd) = (0.0f64, 0.0f64);
        for i in 0..20u64 {
            let ns = rng.random_range(1..=6);
            let na = rng.random_range(2..=4);
            let mdp = random_mdp(1000 + i, ns, na)?;
            let family = if i % 2 == 0 {
                DiscreteFamily::SoftmaxTabular(SoftmaxTabular::new(ns, na))
            } else {
                let d = 3;
                DiscreteFamily::SoftmaxLinear(SoftmaxLinear::new(ns, na, d, random_vec(&mut rng, ns * na * d, 1.0))?)
            };
            let theta = random_vec(&mut rng, family.dim(), 1.0);
            let oracle = TabularOracle::new(&mdp, &family, 1e-6)?;
            let g = oracle.grad(&theta)?;
            let fd = finite_difference_gradient(&mdp, &family, &theta, 1e-5)?;
            worst_fd = worst_fd.max(norm(&sub(&g, &fd)) / norm(&g).max(1e-300));
            worst_pd = worst_pd.max(perf_diff_check(&oracle, &theta)?);
        }
        Ok((
            worst_fd <= 1e-5 && worst_pd <= 1e-8,
            format!("max FD rel err {worst_fd:.2e} (<= 1e-5), max perf-diff residual {worst_pd:.2e} (<= 1e-8), 20 MDPs"),
        ))
    })
}

/// Central differences of the exact `J`.
pub fn finite_difference_gradient<P: DiscretePolicy>(mdp: &TabularMdp, policy: &P, theta: &[f64], eps: f64) -> Result<Vec<f64>> {
    let j = |t: &[f64]| -> Result<f64> { Ok(policy_evaluate(mdp, &policy_table(policy, t))?.j) };
    (0..theta.len())
        .map(|i| {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[i] += eps;
            tm[i] -= eps;
            Ok((j(&tp)? - j(&tm)?) / (2.0 * eps))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// 2. estimator unbiasedness

/// Per-trajectory gradient estimator under test: `(trajectory, policy, theta, gamma) -> g`.
pub type EstimatorFn = dyn Fn(&Trajectory<usize>, &SoftmaxTabular, &[f64], f64) -> Vec<f64> + Sync;

/// The production truncated GPOMDP estimator in [`EstimatorFn`] form.
pub fn gpomdp_fn(t: &Trajectory<usize>, p: &SoftmaxTabular, theta: &[f64], gamma: f64) -> Vec<f64> {
    gpomdp_truncated(t, p, theta, gamma).expect("dimensions match").g
}

pub fn criterion_2(level: Level) -> CriterionResult {
    criterion_2_with(level, &gpomdp_fn)
}

/// Criterion 2 with a pluggable estimator for the plain GPOMDP check.
pub fn criterion_2_with(level: Level, estimator: &EstimatorFn) -> CriterionResult {
    timed(2, "estimator unbiasedness", || {
        let n = match level {
            Level::Full => 100_000,
            Level::Fast => 20_000,
        };
        let mdp = chain2();
        let p = SoftmaxTabular::new(2, 2);
        let h = 3;
        let theta_cur = vec![0.0; 4];
        // |delta| = 0.3
        let theta_prev: Vec<f64> = [0.15, -0.15, 0.15, -0.15].to_vec();
        let exact_cur = exact_truncated_gradient(&mdp, &p, &theta_cur, h)?;
        let exact_prev = exact_truncated_gradient(&mdp, &p, &theta_prev, h)?;
        let sampler = Sampler::new(&mdp, &p, 2024);

        let mut plain = Moments::new(4);
        let mut weighted = Moments::new(4);
        for t in sampler.batch(&theta_cur, h, n) {
            plain.push(&estimator(&t, &p, &theta_cur, mdp.gamma));
            weighted.push(&gpomdp_weighted(&t, &p, &theta_prev, &theta_cur, mdp.gamma)?.g);
        }
        // one recursive step from an unbiased anchor at theta_prev
        let (n0, b) = (10, 10);
        let mut recursive = Moments::new(4);
        for _ in 0..n {
            let anchor = sampler.batch(&theta_prev, h, n0);
            let u0 = batch_mean(&sampler, &anchor, &theta_prev)?;
            let batch = sampler.batch(&theta_cur, h, b);
            recursive.push(&srvr_update(&sampler, &u0, &batch, &theta_prev, &theta_cur)?.g);
        }
        let r = [plain.worst_ratio(&exact_cur), weighted.worst_ratio(&exact_prev), recursive.worst_ratio(&exact_cur)];
        Ok((
            r.iter().all(|&x| x <= 1.0),
            format!(
                "N={n}, worst |mean-exact|/(3SE): gpomdp {:.3}, weighted {:.3}, srvr step {:.3} (<= 1)",
                r[0], r[1], r[2]
            ),
        ))
    })
}

// ---------------------------------------------------------------------------
// 3. truncation bound

pub fn criterion_3(_level: Level) -> CriterionResult {
    timed(3, "truncation bound", || {
        let mdp = chain2();
        let p = SoftmaxTabular::new(2, 2);
        let mut rng = RngStream::new(3).lane(0, 0);
        let mut thetas = vec![vec![0.0; 4]];
        thetas.extend((0..9).map(|_| random_vec(&mut rng, 4, 2.0)));
        let (mut violations, mut rows, mut worst) = (0, 0, 0.0f64);
        for th in &thetas {
            for row in audit_truncation(&mdp, &p, th, 1..=12, 2f64.sqrt())? {
                rows += 1;
                violations += usize::from(!row.ok);
                worst = worst.max(row.measured / row.bound);
            }
        }
        Ok((violations == 0, format!("{violations} violations in {rows} (theta, H) pairs, H=1..12; max gap/bound {worst:.3}")))
    })
}

// ---------------------------------------------------------------------------
// 4. smoothness bound

pub fn criterion_4(_level: Level) -> CriterionResult {
    timed(4, "smoothness bound", || {
        let mut rng = RngStream::new(4).lane(0, 0);
        let mut detail = Vec::new();
        let mut ok = true;
        for (name, mdp) in benchmark_mdps() {
            let p = SoftmaxTabular::new(mdp.n_states, mdp.n_actions);
            let c = ConstantsReport::from_bounds(2f64.sqrt(), 1.0, mdp.reward_bound, mdp.gamma);
            let oracle = TabularOracle::new(&mdp, &p, 1e-6)?;
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let theta = random_vec(&mut rng, p.dim(), 3.0);
                let v = unit_vec(&mut rng, p.dim());
                let eps = 1e-5;
                let tp: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t + eps * vi).collect();
                let curv = dot(&sub(&oracle.grad(&tp)?, &oracle.grad(&theta)?), &v).abs() / eps;
                worst = worst.max(curv);
            }
            ok &= worst <= c.l_j;
            detail.push(format!("{name}: max {worst:.2} <= L_J {:.0}", c.l_j));
        }
        Ok((ok, format!("100 probes each; {}", detail.join("; "))))
    })
}

// ---------------------------------------------------------------------------
// 5. subproblem solvers

/// Relative squared errors `|w - w*|^2 / |w*|^2` of both solvers on Chain2 at `theta`.
pub fn subproblem_errors(seed: u64, iterations: usize, theta: &[f64]) -> Result<(f64, f64)> {
    let mdp = chain2();
    let p = SoftmaxTabular::new(2, 2);
    let oracle = TabularOracle::new(&mdp, &p, 1e-6)?;
    let snap = oracle.snapshot(theta)?;
    let adv = oracle.advantage_table(theta)?;
    let sampler = Sampler::new(&mdp, &p, seed);
    let cfg = SgdConfig::new(iterations);
    let g = 2f64.sqrt();
    let w1 = npg_sgd(&sampler, theta, &cfg, g, AdvantageSource::Exact(&adv))?.w;
    let e1 = norm2(&sub(&w1, &snap.w_star)) / norm2(&snap.w_star);
    // procedure 2 with target u = grad J^H at a long horizon
    let u = GradEstimate::exact(oracle.truncated_grad(theta, 200)?, theta);
    let w_ref = oracle.solve_fisher(theta, &u.g, 1e-6)?;
    let w2 = srvr_npg_sgd(&sampler, theta, &u, &cfg, g)?.w;
    let e2 = norm2(&sub(&w2, &w_ref)) / norm2(&w_ref);
    Ok((e1, e2))
}

pub fn criterion_5(level: Level) -> CriterionResult {
    timed(5, "subproblem solvers", || {
        let seeds: u64 = match level {
            Level::Full => 10,
            Level::Fast => 5,
        };
        let theta = vec![0.0; 4];
        let at = |t: usize| -> Result<(f64, f64)> {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for s in 0..seeds {
                let (e1, e2) = subproblem_errors(500 + s, t, &theta)?;
                a.push(e1);
                b.push(e2);
            }
            Ok((median(a), median(b)))
        };
        let (p1_big, p2_big) = at(100_000)?;
        let (p1_mid, p2_mid) = at(40_000)?;
        let (p1_small, p2_small) = at(10_000)?;
        let ok = p1_big <= 0.01 && p2_big <= 0.01 && p1_mid < p1_small && p2_mid < p2_small;
        Ok((
            ok,
            format!(
                "median rel sq err at T=1e5: proc1 {p1_big:.2e}, proc2 {p2_big:.2e} (<= 1e-2); T=4e4 vs 1e4: proc1 {p1_mid:.2e} < {p1_small:.2e}, proc2 {p2_mid:.2e} < {p2_small:.2e}"
            ),
        ))
    })
}

// ---------------------------------------------------------------------------
// 6. global-gap audit

/// Desk-scale runs of all four drivers with theorem stepsizes.
pub fn theorem_stepsize_configs(c: &ConstantsReport, h: usize) -> Vec<RunConfig> {
    let (g, lj, mu) = (c.g, c.l_j, c.mu_f);
    Algorithm::ALL
        .into_iter()
        .map(|alg| {
            let eta = match alg {
                Algorithm::Pg => 1.0 / (4.0 * lj),
                Algorithm::Npg => mu * mu / (4.0 * g * g * lj),
                Algorithm::SrvrPg => 1.0 / (8.0 * lj),
                Algorithm::SrvrNpg => mu / (16.0 * lj),
            };
            let mut cfg = RunConfig::new(alg, eta, h);
            match alg {
                Algorithm::Pg => (cfg.k, cfg.n) = (100, 100),
                Algorithm::Npg => (cfg.k, cfg.sgd) = (10, SgdConfig::new(1000)),
                Algorithm::SrvrPg => (cfg.s, cfg.m, cfg.n, cfg.b) = (10, 10, 460, 60),
                Algorithm::SrvrNpg => (cfg.s, cfg.m, cfg.n, cfg.b, cfg.sgd) = (4, 5, 100, 20, SgdConfig::new(400)),
            }
            cfg
        })
        .collect()
}

/// Run every driver on every benchmark MDP and audit the global-gap bound.
pub fn global_gap_audit(seeds: &[u64]) -> Result<Vec<AuditReport>> {
    let mut reports = Vec::new();
    for (name, mdp) in benchmark_mdps() {
        let p = SoftmaxTabular::new(mdp.n_states, mdp.n_actions);
        let theta0 = vec![0.0; p.dim()];
        let probe = ConstantsProbe::around(&theta0, 4, 1.0, 10, 200, 66);
        let c = compute_constants(&mdp, &p, &theta0, &probe, 1e-3)?;
        let oracle = TabularOracle::new(&mdp, &p, 1e-3)?;
        let h = default_horizon(c.g, c.r, c.gamma, 1.0);
        let mut runs = Vec::new();
        for cfg in theorem_stepsize_configs(&c, h) {
            for &seed in seeds {
                let cfg = RunConfig { seed, eval_every: 1_000_000, ..cfg.clone() };
                let res = run(&mdp, &p, Some(&oracle), &theta0, &cfg)?;
                let decomposition = decompose_global_bound(&res, &oracle, c.g, c.m)?;
                runs.push(RunAudit { label: format!("{name}/{}/seed{seed}", cfg.algorithm.name()), decomposition });
            }
        }
        let truncation = audit_truncation(&mdp, &p, &theta0, 1..=12, c.g)?;
        reports.push(AuditReport::new(c, runs, truncation));
    }
    Ok(reports)
}

pub fn criterion_6(level: Level) -> CriterionResult {
    timed(6, "global-gap audit", || {
        let seeds: Vec<u64> = match level {
            Level::Full => vec![1, 2],
            Level::Fast => vec![1],
        };
        let reports = global_gap_audit(&seeds)?;
        let runs: Vec<_> = reports.iter().flat_map(|r| &r.runs).collect();
        let failed: Vec<_> = runs.iter().filter(|r| !r.decomposition.passed).map(|r| r.label.clone()).collect();
        let min_slack = runs.iter().map(|r| r.decomposition.slack).fold(f64::INFINITY, f64::min);
        Ok((
            failed.is_empty(),
            format!("{} runs, min slack {min_slack:.3e}, failures: {:?}", runs.len(), failed),
        ))
    })
}

// ---------------------------------------------------------------------------
// 7. ordering

/// Matched-stepsize configurations at a shared trajectory budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingSetup {
    pub budget: u64,
    pub eta: f64,
    pub h: usize,
    pub pg_n: usize,
    pub srvr_n: usize,
    pub srvr_b: usize,
    pub srvr_m: usize,
    pub npg_sgd: usize,
}

impl Default for OrderingSetup {
    fn default() -> Self {
        Self { budget: 10_000, eta: 0.1, h: 50, pg_n: 100, srvr_n: 100, srvr_b: 10, srvr_m: 10, npg_sgd: 500 }
    }
}

impl OrderingSetup {
    pub fn config(&self, alg: Algorithm, seed: u64) -> RunConfig {
        let mut c = RunConfig::new(alg, self.eta, self.h);
        c.seed = seed;
        c.budget = Some(self.budget);
        match alg {
            Algorithm::Pg => {
                c.n = self.pg_n;
                c.k = (self.budget / self.pg_n as u64) as usize;
            }
            Algorithm::SrvrPg | Algorithm::SrvrNpg => {
                (c.n, c.b, c.m) = (self.srvr_n, self.srvr_b, self.srvr_m);
                c.sgd = SgdConfig::new(self.npg_sgd);
                c.s = (self.budget / (c.step_cost(true) + (c.m as u64 - 1) * c.step_cost(false))).max(1) as usize;
            }
            Algorithm::Npg => {
                c.sgd = SgdConfig::new(self.npg_sgd);
                c.k = (self.budget / self.npg_sgd as u64) as usize;
            }
        }
        c
    }
}

/// First update index at which `J* - J <= frac (J* - J(theta0))`, if any.
pub fn iterations_to_gap(run: &RunResult, j_star: f64, frac: f64) -> Option<usize> {
    let j0 = run.records[0].j_exact?;
    let target = frac * (j_star - j0);
    run.records.iter().find(|r| r.j_exact.is_some_and(|j| j_star - j <= target)).map(|r| r.iter)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingOutcome {
    pub mdp: String,
    pub pg_grad2: f64,
    pub srvr_grad2: f64,
    /// Medians, `None` when the median run never reached the gap threshold.
    pub pg_iters: Option<f64>,
    pub npg_iters: Option<f64>,
}

fn median_iters(xs: Vec<Option<usize>>) -> Option<f64> {
    // unreached counts as +infinity
    let v: Vec<f64> = xs.into_iter().map(|x| x.map_or(f64::INFINITY, |i| i as f64)).collect();
    let m = median(v);
    m.is_finite().then_some(m)
}

pub fn ordering_experiment(setup: &OrderingSetup, seeds: &[u64]) -> Result<Vec<OrderingOutcome>> {
    let mut out = Vec::new();
    for (name, mdp) in benchmark_mdps() {
        let p = SoftmaxTabular::new(mdp.n_states, mdp.n_actions);
        let oracle = TabularOracle::new(&mdp, &p, 1e-3)?;
        let theta0 = vec![0.0; p.dim()];
        let (mut pg2, mut sr2, mut pgi, mut npgi) = (vec![], vec![], vec![], vec![]);
        for &seed in seeds {
            let pg = run(&mdp, &p, Some(&oracle), &theta0, &setup.config(Algorithm::Pg, seed))?;
            let sr = run(&mdp, &p, Some(&oracle), &theta0, &setup.config(Algorithm::SrvrPg, seed))?;
            let npg = run(&mdp, &p, Some(&oracle), &theta0, &setup.config(Algorithm::Npg, seed))?;
            pg2.push(pg.records.last().unwrap().grad_norm2.unwrap());
            sr2.push(sr.records.last().unwrap().grad_norm2.unwrap());
            pgi.push(iterations_to_gap(&pg, oracle.j_star(), 0.1));
            npgi.push(iterations_to_gap(&npg, oracle.j_star(), 0.1));
        }
        out.push(OrderingOutcome {
            mdp: name,
            pg_grad2: median(pg2),
            srvr_grad2: median(sr2),
            pg_iters: median_iters(pgi),
            npg_iters: median_iters(npgi),
        });
    }
    Ok(out)
}

pub fn criterion_7(level: Level) -> CriterionResult {
    timed(7, "variance-reduction ordering", || {
        let n_seeds = match level {
            Level::Full => 20,
            Level::Fast => 5,
        };
        let seeds: Vec<u64> = (0..n_seeds).map(|s| 7000 + s).collect();
        let outcomes = ordering_experiment(&OrderingSetup::default(), &seeds)?;
        let mut ok = true;
        let mut parts = Vec::new();
        for o in &outcomes {
            let a = o.srvr_grad2 <= o.pg_grad2;
            let b = match (o.npg_iters, o.pg_iters) {
                (Some(n), Some(p)) => n <= p,
                (Some(_), None) => true,
                (None, _) => false,
            };
            ok &= a && b;
            let fmt_it = |x: Option<f64>| x.map_or("never".to_string(), |v| format!("{v}"));
            parts.push(format!(
                "{}: |grad|^2 srvr {:.2e} vs pg {:.2e}; iters npg {} vs pg {}",
                o.mdp,
                o.srvr_grad2,
                o.pg_grad2,
                fmt_it(o.npg_iters),
                fmt_it(o.pg_iters)
            ));
        }
        Ok((ok, format!("medians over {n_seeds} seeds, budget 1e4; {}", parts.join("; "))))
    })
}

// ---------------------------------------------------------------------------
// 8. recursive-estimator variance

pub fn criterion_8(level: Level) -> CriterionResult {
    timed(8, "SRVR variance bound", || {
        let reps = match level {
            Level::Full => 1000,
            Level::Fast => 300,
        };
        let mdp = chain2();
        let p = SoftmaxTabular::new(2, 2);
        let (h, n, b) = (10, 50, 10);
        let theta0 = [0.0; 4];
        let step = [0.1, -0.05, -0.08, 0.06];
        let path: Vec<Vec<f64>> = (0..=5).map(|t| theta0.iter().zip(&step).map(|(x, s)| x + t as f64 * s).collect()).collect();
        let probe_sampler = Sampler::new(&mdp, &p, 808);
        let pairs: Vec<_> = path.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
        let rep = moment_probe(
            &probe_sampler,
            &MomentProbeSpec { thetas: path.clone(), pairs, horizon: h, replications: 2000 },
        )?;
        let c_gamma = crate::analysis::c_gamma_formula(mdp.reward_bound, 2f64.sqrt(), 1.0, rep.w_hat, mdp.gamma);
        let sampler = Sampler::new(&mdp, &p, 809);
        let mut moments: Vec<Moments> = (0..path.len()).map(|_| Moments::new(4)).collect();
        for _ in 0..reps {
            let batch = sampler.batch(&path[0], h, n);
            let mut u = batch_mean(&sampler, &batch, &path[0])?;
            moments[0].push(&u.g);
            for t in 1..path.len() {
                let batch = sampler.batch(&path[t], h, b);
                u = srvr_update(&sampler, &u, &batch, &path[t - 1], &path[t])?;
                moments[t].push(&u.g);
            }
        }
        // relative standard error of a sample variance, ~ sqrt(2/(n-1))
        let mc_tol = (2.0 / (reps as f64 - 1.0)).sqrt();
        let mut ok = true;
        let mut worst = 0.0f64;
        let mut path_len2 = 0.0;
        for t in 0..path.len() {
            if t > 0 {
                path_len2 += norm2(&sub(&path[t], &path[t - 1]));
            }
            let var: f64 = moments[t].variance().iter().sum();
            let bound = (c_gamma / b as f64 * path_len2 + rep.sigma2_hat / n as f64) * (1.0 + 5.0 * mc_tol);
            ok &= var <= bound;
            worst = worst.max(var / bound);
        }
        Ok((ok, format!("{reps} replications, 5-step path, max Var(u_t)/bound {worst:.3e}, C_gamma {c_gamma:.3e}, sigma2 {:.3}", rep.sigma2_hat)))
    })
}

// ---------------------------------------------------------------------------
// 9. determinism

pub fn criterion_9(_level: Level) -> CriterionResult {
    timed(9, "determinism", || {
        let mdp = chain2();
        let p = SoftmaxTabular::new(2, 2);
        let oracle = TabularOracle::new(&mdp, &p, 1e-3)?;
        let setup = OrderingSetup { budget: 2000, ..Default::default() };
        let mut ok = true;
        for alg in Algorithm::ALL {
            let cfg = setup.config(alg, 99);
            let a = run(&mdp, &p, Some(&oracle), &[0.0; 4], &cfg)?.to_csv();
            let b = run(&mdp, &p, Some(&oracle), &[0.0; 4], &cfg)?.to_csv();
            let c = run(&mdp, &p, Some(&oracle), &[0.0; 4], &RunConfig { parallel: true, ..cfg })?.to_csv();
            ok &= a == b && a == c;
        }
        Ok((ok, "sequential, repeated and parallel runs byte-identical for all four drivers".into()))
    })
}

pub fn run_criterion(id: u32, level: Level) -> Option<CriterionResult> {
    Some(match id {
        1 => criterion_1(level),
        2 => criterion_2(level),
        3 => criterion_3(level),
        4 => criterion_4(level),
        5 => criterion_5(level),
        6 => criterion_6(level),
        7 => criterion_7(level),
        8 => criterion_8(level),
        9 => criterion_9(level),
        _ => return None,
    })
}

pub fn run_all(level: Level) -> Vec<CriterionResult> {
    (1..=9).filter_map(|i| run_criterion(i, level)).collect()
}
