//! PG, NPG, SRVR-PG and SRVR-NPG drivers, theorem stepsize schedules and
//! run serialization.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::ConstantsReport;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::estimators::{batch_mean, srvr_update, GradEstimate};
use crate::linalg::{norm, norm2, sub};
use crate::npg_solver::{npg_sgd, srvr_npg_sgd, AdvantageSource, SgdConfig};
use crate::oracle::ExactOracle;
use crate::policy::Policy;
use crate::rng::RngStream;
use crate::sampler::{default_h_adv, Sampler};

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "iter,j_exact,grad_norm2,w_norm2,w_err,trajectories";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pg,
    Npg,
    SrvrPg,
    SrvrNpg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::Pg, Self::Npg, Self::SrvrPg, Self::SrvrNpg];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pg => "pg",
            Self::Npg => "npg",
            Self::SrvrPg => "srvr_pg",
            Self::SrvrNpg => "srvr_npg",
        }
    }

    pub fn is_natural(self) -> bool {
        matches!(self, Self::Npg | Self::SrvrNpg)
    }

    pub fn is_srvr(self) -> bool {
        matches!(self, Self::SrvrPg | Self::SrvrNpg)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

fn default_eval_every() -> usize {
    1
}

fn default_lambda() -> f64 {
    crate::policy::DEFAULT_DAMPING
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub eta: f64,
    /// Iterations of PG / NPG.
    #[serde(default = "one")]
    pub k: usize,
    /// Epochs of the SRVR variants.
    #[serde(default = "one")]
    pub s: usize,
    /// Epoch length of the SRVR variants.
    #[serde(default = "one")]
    pub m: usize,
    /// Large batch (PG batch, SRVR anchor batch).
    #[serde(default = "one")]
    pub n: usize,
    /// SRVR minibatch.
    #[serde(default = "one")]
    pub b: usize,
    /// Truncation horizon.
    pub h: usize,
    /// Subproblem solver for the natural variants.
    #[serde(default = "default_sgd")]
    pub sgd: SgdConfig,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Use exact advantages in the NPG subproblem.
    #[serde(default)]
    pub exact_adv: bool,
    /// Replace every stochastic estimate by its exact counterpart.
    #[serde(default)]
    pub oracle_gradients: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_adv: Option<usize>,
    /// Sample batches on the thread pool. Does not change results.
    #[serde(default)]
    pub parallel: bool,
}

fn default_sgd() -> SgdConfig {
    SgdConfig::new(1000)
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, eta: f64, h: usize) -> Self {
        Self {
            algorithm,
            eta,
            k: 1,
            s: 1,
            m: 1,
            n: 1,
            b: 1,
            h,
            sgd: default_sgd(),
            lambda: default_lambda(),
            seed: 0,
            budget: None,
            eval_every: 1,
            exact_adv: false,
            oracle_gradients: false,
            h_adv: None,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be positive", self.eta));
        }
        for (name, v) in [("k", self.k), ("s", self.s), ("m", self.m), ("n", self.n), ("b", self.b), ("h", self.h), ("eval_every", self.eval_every)] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda = {} must be nonnegative", self.lambda));
        }
        if self.algorithm.is_natural() {
            self.sgd.validate()?;
        }
        if let Some(budget) = self.budget {
            let first = self.step_cost(true);
            if budget < first {
                return bad(format!("budget {budget} below the cost {first} of the first iteration"));
            }
        }
        Ok(())
    }

    /// Trajectories charged for one update (anchor or inner step).
    pub fn step_cost(&self, anchor: bool) -> u64 {
        if self.oracle_gradients {
            return 0;
        }
        let sgd = self.sgd.iterations as u64;
        match self.algorithm {
            Algorithm::Pg => self.n as u64,
            Algorithm::Npg => sgd,
            Algorithm::SrvrPg => if anchor { self.n as u64 } else { self.b as u64 },
            Algorithm::SrvrNpg => sgd + if anchor { self.n as u64 } else { self.b as u64 },
        }
    }

    /// Number of updates on a full schedule.
    pub fn total_updates(&self) -> usize {
        if self.algorithm.is_srvr() {
            self.s * self.m
        } else {
            self.k
        }
    }

    /// Trajectories consumed by a full schedule.
    pub fn total_cost(&self) -> u64 {
        if self.algorithm.is_srvr() {
            self.s as u64 * (self.step_cost(true) + (self.m as u64 - 1) * self.step_cost(false))
        } else {
            self.k as u64 * self.step_cost(true)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub theta: Vec<f64>,
    /// Update direction applied at this iterate: `theta_{k+1} = theta_k + eta * w`.
    pub w: Option<Vec<f64>>,
    pub j_exact: Option<f64>,
    pub grad_norm2: Option<f64>,
    pub w_norm2: Option<f64>,
    /// `|w - (F + lambda I)^{-1} grad J|`.
    pub w_err: Option<f64>,
    pub trajectories: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputDraw {
    pub index: usize,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub records: Vec<IterationRecord>,
    pub final_theta: Vec<f64>,
    /// Uniformly drawn iterate (SRVR variants).
    pub theta_out: Option<OutputDraw>,
    pub config: RunConfig,
    /// Set when the trajectory budget stopped the run early.
    pub truncated: bool,
    pub trajectories: u64,
    pub wall_time_s: f64,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    schema_version: u32,
    columns: Vec<&'static str>,
    config: &'a RunConfig,
    truncated: bool,
    trajectories: u64,
    updates: usize,
    final_theta: &'a [f64],
    theta_out: &'a Option<OutputDraw>,
}

fn fmt_opt(out: &mut String, v: Option<f64>) {
    if let Some(x) = v {
        write!(out, "{x:?}").unwrap();
    }
}

impl RunResult {
    /// Updates actually performed.
    pub fn updates(&self) -> usize {
        self.records.iter().filter(|r| r.w.is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            write!(out, "{},", r.iter).unwrap();
            fmt_opt(&mut out, r.j_exact);
            out.push(',');
            fmt_opt(&mut out, r.grad_norm2);
            out.push(',');
            fmt_opt(&mut out, r.w_norm2);
            out.push(',');
            fmt_opt(&mut out, r.w_err);
            writeln!(out, ",{}", r.trajectories).unwrap();
        }
        out
    }

    /// JSON sidecar echoing the configuration. Excludes wall time so it is reproducible.
    pub fn sidecar_json(&self) -> String {
        let sc = Sidecar {
            schema_version: CSV_SCHEMA_VERSION,
            columns: CSV_HEADER.split(',').collect(),
            config: &self.config,
            truncated: self.truncated,
            trajectories: self.trajectories,
            updates: self.updates(),
            final_theta: &self.final_theta,
            theta_out: &self.theta_out,
        };
        serde_json::to_string_pretty(&sc).expect("sidecar serializes")
    }
}

#[cfg(not(target_arch = "wasm32"))]
fn clock() -> impl FnOnce() -> f64 {
    let t = std::time::Instant::now();
    move || t.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn clock() -> impl FnOnce() -> f64 {
    || 0.0
}

/// Shared bookkeeping for all four drivers.
struct Recorder<'o> {
    oracle: Option<&'o dyn ExactOracle>,
    eval_every: usize,
    records: Vec<IterationRecord>,
}

impl Recorder<'_> {
    fn push(&mut self, theta: &[f64], w: Option<Vec<f64>>, trajectories: u64, force_eval: bool) -> Result<()> {
        let iter = self.records.len();
        let mut rec = IterationRecord {
            iter,
            theta: theta.to_vec(),
            w_norm2: w.as_ref().map(|w| norm2(w)),
            w,
            j_exact: None,
            grad_norm2: None,
            w_err: None,
            trajectories,
        };
        if let Some(o) = self.oracle {
            if force_eval || iter.is_multiple_of(self.eval_every) {
                let snap = o.snapshot(theta)?;
                rec.j_exact = Some(snap.j);
                rec.grad_norm2 = Some(norm2(&snap.grad));
                rec.w_err = rec.w.as_ref().map(|w| norm(&sub(w, &snap.w_star)));
            }
        }
        self.records.push(rec);
        Ok(())
    }
}

fn step(theta: &mut [f64], eta: f64, w: &[f64]) {
    for (t, wi) in theta.iter_mut().zip(w) {
        *t += eta * wi;
    }
}

fn require_oracle<'o>(oracle: Option<&'o dyn ExactOracle>, what: &str) -> Result<&'o dyn ExactOracle> {
    oracle.ok_or_else(|| Error::Config(format!("{what} requires an exact oracle")))
}

fn sgd_g_bound<P: Policy>(policy: &P, cfg: &RunConfig) -> Result<f64> {
    match (cfg.sgd.stepsize, policy.analytic_constants()) {
        (Some(_), _) => Ok(1.0),
        (None, Some((g, _))) => Ok(g),
        (None, None) => Err(Error::MissingConstant("G (set sgd.stepsize explicitly)")),
    }
}

/// Run whichever driver `cfg.algorithm` names.
pub fn run<E, P>(
    env: &E,
    policy: &P,
    oracle: Option<&dyn ExactOracle>,
    theta0: &[f64],
    cfg: &RunConfig,
) -> Result<RunResult>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    cfg.validate()?;
    policy.check_theta(theta0)?;
    if cfg.oracle_gradients {
        require_oracle(oracle, "oracle_gradients")?;
    }
    if cfg.exact_adv && cfg.algorithm == Algorithm::Npg {
        require_oracle(oracle, "exact_adv")?;
    }
    let elapsed = clock();
    let mut result = match cfg.algorithm {
        Algorithm::Pg | Algorithm::Npg => run_plain(env, policy, oracle, theta0, cfg)?,
        Algorithm::SrvrPg | Algorithm::SrvrNpg => run_srvr(env, policy, oracle, theta0, cfg)?,
    };
    result.wall_time_s = elapsed();
    Ok(result)
}

pub fn run_pg<E, P>(env: &E, policy: &P, oracle: Option<&dyn ExactOracle>, theta0: &[f64], cfg: &RunConfig) -> Result<RunResult>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    expect_algorithm(cfg, Algorithm::Pg)?;
    run(env, policy, oracle, theta0, cfg)
}

pub fn run_npg<E, P>(env: &E, policy: &P, oracle: Option<&dyn ExactOracle>, theta0: &[f64], cfg: &RunConfig) -> Result<RunResult>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    expect_algorithm(cfg, Algorithm::Npg)?;
    run(env, policy, oracle, theta0, cfg)
}

pub fn run_srvr_pg<E, P>(env: &E, policy: &P, oracle: Option<&dyn ExactOracle>, theta0: &[f64], cfg: &RunConfig) -> Result<RunResult>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    expect_algorithm(cfg, Algorithm::SrvrPg)?;
    run(env, policy, oracle, theta0, cfg)
}

pub fn run_srvr_npg<E, P>(env: &E, policy: &P, oracle: Option<&dyn ExactOracle>, theta0: &[f64], cfg: &RunConfig) -> Result<RunResult>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    expect_algorithm(cfg, Algorithm::SrvrNpg)?;
    run(env, policy, oracle, theta0, cfg)
}

fn expect_algorithm(cfg: &RunConfig, alg: Algorithm) -> Result<()> {
    if cfg.algorithm != alg {
        return Err(Error::Config(format!("config is for {}, not {}", cfg.algorithm.name(), alg.name())));
    }
    Ok(())
}

fn over_budget(cfg: &RunConfig, used: u64, next: u64) -> bool {
    cfg.budget.is_some_and(|b| used + next > b)
}

fn run_plain<E, P>(env: &E, policy: &P, oracle: Option<&dyn ExactOracle>, theta0: &[f64], cfg: &RunConfig) -> Result<RunResult>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    let sampler = Sampler::new(env, policy, cfg.seed).with_parallel(cfg.parallel);
    let mut rec = Recorder { oracle, eval_every: cfg.eval_every, records: Vec::with_capacity(cfg.k + 1) };
    let mut theta = theta0.to_vec();
    let h_adv = cfg.h_adv.unwrap_or_else(|| default_h_adv(env.gamma(), env.reward_bound()));
    let g_bound = if cfg.algorithm.is_natural() { sgd_g_bound(policy, cfg)? } else { 1.0 };
    let mut truncated = false;
    for _ in 0..cfg.k {
        if over_budget(cfg, sampler.trajectories_used(), cfg.step_cost(true)) {
            truncated = true;
            break;
        }
        let w = match (cfg.algorithm, cfg.oracle_gradients) {
            (Algorithm::Pg, true) => require_oracle(oracle, "oracle_gradients")?.truncated_grad(&theta, cfg.h)?,
            (Algorithm::Pg, false) => {
                let batch = sampler.batch(&theta, cfg.h, cfg.n);
                batch_mean(&sampler, &batch, &theta)?.g
            }
            (_, true) => {
                let o = require_oracle(oracle, "oracle_gradients")?;
                let g = o.grad(&theta)?;
                o.solve_fisher(&theta, &g, cfg.lambda)?
            }
            (_, false) => {
                let table;
                let source = if cfg.exact_adv {
                    table = require_oracle(oracle, "exact_adv")?.advantage_table(&theta)?;
                    AdvantageSource::Exact(&table)
                } else {
                    AdvantageSource::Sampled { h_adv }
                };
                npg_sgd(&sampler, &theta, &cfg.sgd, g_bound, source)?.w
            }
        };
        rec.push(&theta, Some(w.clone()), sampler.trajectories_used(), false)?;
        step(&mut theta, cfg.eta, &w);
    }
    rec.push(&theta, None, sampler.trajectories_used(), true)?;
    Ok(RunResult {
        records: rec.records,
        final_theta: theta,
        theta_out: None,
        config: cfg.clone(),
        truncated,
        trajectories: sampler.trajectories_used(),
        wall_time_s: 0.0,
    })
}

fn run_srvr<E, P>(env: &E, policy: &P, oracle: Option<&dyn ExactOracle>, theta0: &[f64], cfg: &RunConfig) -> Result<RunResult>
where
    E: Environment,
    P: Policy<Action = E::Action>,
{
    let sampler = Sampler::new(env, policy, cfg.seed).with_parallel(cfg.parallel);
    let natural = cfg.algorithm.is_natural();
    let g_bound = if natural { sgd_g_bound(policy, cfg)? } else { 1.0 };
    let mut rec = Recorder { oracle, eval_every: cfg.eval_every, records: Vec::with_capacity(cfg.s * cfg.m + 1) };
    let mut theta = theta0.to_vec();
    let mut truncated = false;
    'epochs: for _ in 0..cfg.s {
        let mut u: Option<GradEstimate> = None;
        let mut theta_prev = theta.clone();
        for t in 0..cfg.m {
            if over_budget(cfg, sampler.trajectories_used(), cfg.step_cost(t == 0)) {
                truncated = true;
                break 'epochs;
            }
            let next = match (cfg.oracle_gradients, u.take()) {
                (true, None) => {
                    let o = require_oracle(oracle, "oracle_gradients")?;
                    GradEstimate::exact(o.truncated_grad(&theta, cfg.h)?, &theta)
                }
                (true, Some(prev)) => {
                    // exact correction: grad J^H(theta_t) - grad J^H(theta_{t-1})
                    let o = require_oracle(oracle, "oracle_gradients")?;
                    let cur = o.truncated_grad(&theta, cfg.h)?;
                    let old = o.truncated_grad(&theta_prev, cfg.h)?;
                    let g = prev.g.iter().zip(cur.iter().zip(&old)).map(|(p, (c, o))| p + (c - o)).collect();
                    GradEstimate::exact(g, &theta)
                }
                (false, None) => {
                    let batch = sampler.batch(&theta, cfg.h, cfg.n);
                    batch_mean(&sampler, &batch, &theta)?
                }
                (false, Some(prev)) => {
                    let batch = sampler.batch(&theta, cfg.h, cfg.b);
                    srvr_update(&sampler, &prev, &batch, &theta_prev, &theta)?
                }
            };
            let w = if !natural {
                next.g.clone()
            } else if cfg.oracle_gradients {
                require_oracle(oracle, "oracle_gradients")?.solve_fisher(&theta, &next.g, cfg.lambda)?
            } else {
                srvr_npg_sgd(&sampler, &theta, &next, &cfg.sgd, g_bound)?.w
            };
            rec.push(&theta, Some(w.clone()), sampler.trajectories_used(), false)?;
            theta_prev.clone_from(&theta);
            step(&mut theta, cfg.eta, &w);
            u = Some(next);
        }
    }
    rec.push(&theta, None, sampler.trajectories_used(), true)?;
    let updates = rec.records.len() - 1;
    let theta_out = (updates > 0).then(|| {
        let mut rng = RngStream::new(cfg.seed).child(0x7e7a0_u64).lane(0, 0);
        let index = rng.random_range(0..updates);
        OutputDraw { index, theta: rec.records[index].theta.clone() }
    });
    Ok(RunResult {
        records: rec.records,
        final_theta: theta,
        theta_out,
        config: cfg.clone(),
        truncated,
        trajectories: sampler.trajectories_used(),
        wall_time_s: 0.0,
    })
}

/// Which theorem's parameter choice to reproduce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Thm1Pg,
    Thm2Npg,
    Thm3SrvrPg,
    Thm4SrvrNpg,
    StationaryE1,
    StationaryE2,
    StationaryE3,
    StationaryE4,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 8] = [
        Self::Thm1Pg,
        Self::Thm2Npg,
        Self::Thm3SrvrPg,
        Self::Thm4SrvrNpg,
        Self::StationaryE1,
        Self::StationaryE2,
        Self::StationaryE3,
        Self::StationaryE4,
    ];

    pub fn algorithm(self) -> Algorithm {
        match self {
            Self::Thm1Pg | Self::StationaryE1 => Algorithm::Pg,
            Self::Thm2Npg | Self::StationaryE2 => Algorithm::Npg,
            Self::Thm3SrvrPg | Self::StationaryE3 => Algorithm::SrvrPg,
            Self::Thm4SrvrNpg | Self::StationaryE4 => Algorithm::SrvrNpg,
        }
    }
}

/// Theorem parameter choice. Counts are raw real values before rounding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub which: ScheduleKind,
    pub eta: f64,
    pub k: Option<f64>,
    pub s: Option<f64>,
    pub m: Option<f64>,
    pub n: Option<f64>,
    pub b: Option<f64>,
    pub sgd_iterations: Option<f64>,
    pub h: usize,
    /// Counts are known only up to a constant factor (set to 1).
    pub order_only: bool,
    /// Every count could be computed from the available constants.
    pub complete: bool,
    /// Small-`epsilon` conditions, when the theorem states any.
    pub feasible: Option<bool>,
    pub notes: Vec<String>,
}

impl Schedule {
    /// A run configuration with counts rounded up (at least 1).
    pub fn skeleton(&self, seed: u64) -> RunConfig {
        let c = |x: Option<f64>| x.map_or(1, |v| v.ceil().clamp(1.0, usize::MAX as f64) as usize);
        let mut cfg = RunConfig::new(self.which.algorithm(), self.eta, self.h);
        cfg.k = c(self.k);
        cfg.s = c(self.s);
        cfg.m = c(self.m);
        cfg.n = c(self.n);
        cfg.b = c(self.b);
        cfg.sgd = SgdConfig::new(c(self.sgd_iterations));
        cfg.seed = seed;
        cfg
    }
}

/// Smallest `H` with truncation bound `G R ((H+1)/(1-gamma) + gamma/(1-gamma)^2) gamma^H <= epsilon / 2`.
pub fn default_horizon(g: f64, r: f64, gamma: f64, epsilon: f64) -> usize {
    let bound = |h: f64| g * r * ((h + 1.0) / (1.0 - gamma) + gamma / (1.0 - gamma).powi(2)) * gamma.powf(h);
    let mut h = 1usize;
    while bound(h as f64) > epsilon / 2.0 && h < 1_000_000 {
        h += 1;
    }
    h
}

/// Stepsizes and counts prescribed by the convergence theorems.
pub fn theorem_schedule(which: ScheduleKind, c: &ConstantsReport, epsilon: f64) -> Result<Schedule> {
    if !(epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let (g, m, r, gamma, lj) = (c.g, c.m, c.r, c.gamma, c.l_j);
    let one_m = 1.0 - gamma;
    let mu = c.mu_f;
    let sigma2 = c.sigma2_hat;
    let w = c.w_hat;
    let gap = match (c.j_star, c.j0) {
        (Some(js), Some(j0)) => Some(js - j0),
        _ => None,
    };
    let mut notes = Vec::new();
    let mut need = |name: &str, v: Option<f64>| -> Option<f64> {
        if v.is_none() {
            notes.push(format!("missing {name}"));
        }
        v
    };
    let needs_mu = matches!(which, ScheduleKind::Thm2Npg | ScheduleKind::Thm4SrvrNpg | ScheduleKind::StationaryE2 | ScheduleKind::StationaryE4);
    if needs_mu && !(mu > 0.0) {
        return Err(Error::MissingConstant("mu_F > 0"));
    }
    let h = default_horizon(g, r, gamma, epsilon);
    let mut s = Schedule {
        which,
        eta: 0.0,
        k: None,
        s: None,
        m: None,
        n: None,
        b: None,
        sgd_iterations: None,
        h,
        order_only: true,
        complete: true,
        feasible: None,
        notes: Vec::new(),
    };
    let e = epsilon;
    match which {
        ScheduleKind::Thm1Pg => {
            s.eta = 1.0 / (4.0 * lj);
            s.k = Some(1.0 / (one_m.powi(2) * e * e));
            s.n = need("sigma2", sigma2).map(|v| v / (e * e));
        }
        ScheduleKind::Thm2Npg => {
            s.eta = mu * mu / (4.0 * g * g * lj);
            s.k = Some(1.0 / (one_m.powi(2) * e));
            s.sgd_iterations = Some(1.0 / (one_m.powi(4) * e * e));
        }
        ScheduleKind::Thm3SrvrPg => {
            s.eta = 1.0 / (8.0 * lj);
            s.s = Some(1.0 / (one_m.powf(2.5) * e));
            s.m = Some(one_m.sqrt() / e);
            s.b = need("W", w).map(|w| w / (one_m.sqrt() * e));
            s.n = need("sigma2", sigma2).map(|v| v / e);
        }
        ScheduleKind::Thm4SrvrNpg => {
            s.eta = mu / (16.0 * lj);
            s.s = Some(1.0 / (one_m.powf(2.5) * e.sqrt()));
            s.m = Some(one_m.sqrt() / e.sqrt());
            s.b = need("W", w).map(|w| w / (one_m.sqrt() * e.powf(1.5)));
            s.n = need("sigma2", sigma2).map(|v| v / (e * e));
            s.sgd_iterations = Some(1.0 / (one_m.powi(4) * e * e));
            s.feasible = Some(srvr_npg_feasible(c, mu / (8.0 * lj), e));
            notes.push("feasibility evaluated with the stationary-variant conditions".into());
        }
        ScheduleKind::StationaryE1 => {
            s.order_only = false;
            s.eta = 1.0 / (4.0 * lj);
            s.k = need("J* - J(theta0)", gap).map(|gp| 32.0 * lj * gp / e);
            s.n = need("sigma2", sigma2).map(|v| 6.0 * v / e);
            notes.push("J^{H,*} - J^H(theta0) approximated by J* - J(theta0)".into());
        }
        ScheduleKind::StationaryE2 => {
            s.eta = mu * mu / (4.0 * g * g * lj);
            s.k = need("J* - J(theta0)", gap).map(|gp| 32.0 * lj * g.powi(4) * gp / (mu * mu * e));
            s.sgd_iterations = Some(1.0 / (one_m.powi(4) * e));
            notes.push("only the subproblem iteration count is order-level".into());
        }
        ScheduleKind::StationaryE3 => {
            s.order_only = false;
            s.eta = 1.0 / (4.0 * lj);
            s.n = need("sigma2", sigma2).map(|v| 12.0 * v / e);
            s.s = need("J* - J(theta0)", gap).map(|gp| 64.0 * m * r * gp / (one_m.powf(2.5) * e.sqrt()));
            let mm = one_m.sqrt() / e.sqrt();
            s.m = Some(mm);
            s.b = need("W", w).map(|w| 72.0 * s.eta * g * g * (2.0 * g * g + m) * (w + 1.0) * gamma / (m * one_m.powi(3)) * mm);
        }
        ScheduleKind::StationaryE4 => {
            let eta = mu / (8.0 * lj);
            s.eta = eta;
            s.s = need("J* - J(theta0)", gap).map(|gp| 24.0 * g * g * gp / (eta * e.sqrt()));
            s.m = Some(1.0 / e.sqrt());
            s.b = need("W", w).map(|w| {
                (eta / mu + eta / (4.0 * g * g)) * 72.0 * r * g * g * (2.0 * g * g + m) * (w + 1.0) * gamma
                    / one_m.powi(5)
                    / (lj * e.powf(0.75))
            });
            s.n = need("sigma2", sigma2).map(|v| 3.0 * (8.0 * g * g / mu + 2.0) * v / e);
            s.sgd_iterations = Some(1.0 / (one_m.powi(4) * e));
            s.feasible = Some(srvr_npg_feasible(c, eta, e));
            notes.push("J^{H,*} - J^H(theta0) approximated by J* - J(theta0); subproblem count is order-level".into());
        }
    }
    s.complete = !notes.iter().any(|n| n.starts_with("missing"));
    s.notes = notes;
    Ok(s)
}

/// Small-`epsilon` conditions attached to the SRVR-NPG stationary result.
fn srvr_npg_feasible(c: &ConstantsReport, eta: f64, e: f64) -> bool {
    let (g, r, mu, lj) = (c.g, c.r, c.mu_f, c.l_j);
    let gb = (g * r / (1.0 - c.gamma).powi(2)).powi(2);
    let c1 = 3.0 * (8.0 * g * g / mu + 2.0) * gb;
    let c2 = 3.0 * (8.0 * g * g / 4.0 + 8.0 * g.powi(4) / (4.0 * mu)) * (2.0 / mu) * gb;
    let c3 = (2.0 / (3.0 * eta * lj) * (mu + mu * mu / (4.0 * g * g))).powi(4);
    e <= c1.min(c2).min(c3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_accounting() {
        let mut c = RunConfig::new(Algorithm::SrvrPg, 0.1, 3);
        (c.s, c.m, c.n, c.b) = (3, 4, 20, 5);
        assert_eq!(c.total_cost(), 3 * (20 + 3 * 5));
        c.algorithm = Algorithm::SrvrNpg;
        c.sgd = SgdConfig::new(7);
        assert_eq!(c.total_cost(), 3 * (27 + 3 * 12));
        c.algorithm = Algorithm::Pg;
        c.k = 9;
        assert_eq!(c.total_cost(), 180);
        c.budget = Some(10);
        assert!(c.validate().is_err());
    }

    #[test]
    fn horizon_rule_meets_bound() {
        let (g, r, gamma, e) = (2f64.sqrt(), 1.0, 0.9, 0.1);
        let h = default_horizon(g, r, gamma, e);
        let b = |h: f64| g * r * ((h + 1.0) / (1.0 - gamma) + gamma / (1.0 - gamma).powi(2)) * gamma.powf(h);
        assert!(b(h as f64) <= e / 2.0);
        assert!(b(h as f64 - 1.0) > e / 2.0);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("sgd".parse::<Algorithm>().is_err());
    }
}
