use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use vrpg_core::algorithms::{run, theorem_schedule, RunConfig, RunResult, Schedule, ScheduleKind};
use vrpg_core::analysis::{compute_constants, ConstantsReport};
use vrpg_core::oracle::TabularOracle;
use vrpg_core::policy::{DiscreteFamily, PolicyFamily, PolicyFile};
use vrpg_core::sampler::Sampler;
use vrpg_core::verify::{global_gap_audit, run_criterion, CriterionResult, Level};

use crate::spec::{ExperimentSpec, Resolved};

pub const INDEX_SCHEMA_VERSION: u32 = 1;

/// Command-line overrides shared by `run` and `constants`.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub exact_adv: bool,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IndexEntry {
    pub algorithm: String,
    pub seed: u64,
    pub csv: String,
    pub sidecar: String,
    pub truncated: bool,
    pub trajectories: u64,
    pub updates: usize,
    pub final_j: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunIndex {
    pub schema_version: u32,
    pub spec: ExperimentSpec,
    pub runs: Vec<IndexEntry>,
}

fn load(spec_path: &Path, o: &Overrides) -> Result<Resolved> {
    let mut spec = ExperimentSpec::load(spec_path)?;
    if let Some(seeds) = &o.seeds {
        spec.seeds.clone_from(seeds);
    }
    spec.validate()?;
    spec.resolve()
}

fn family_of(p: &DiscreteFamily) -> PolicyFamily {
    match p {
        DiscreteFamily::SoftmaxTabular(p) => PolicyFamily::SoftmaxTabular(p.clone()),
        DiscreteFamily::SoftmaxLinear(p) => PolicyFamily::SoftmaxLinear(p.clone()),
    }
}

fn schedule_epsilon(r: &Resolved, o: &Overrides) -> f64 {
    o.epsilon
        .or(r.spec.schedule.as_ref().map(|s| s.epsilon))
        .or(r.spec.epsilon)
        .unwrap_or(0.1)
}

fn constants_for(r: &Resolved, lambda: f64) -> Result<ConstantsReport> {
    let probe = r.probe(r.spec.seeds[0]);
    Ok(compute_constants(&r.mdp, &r.policy, &r.theta0, &probe, lambda)?)
}

/// The run configurations named by the spec file, before seeds are applied.
fn base_configs(r: &Resolved, o: &Overrides) -> Result<Vec<RunConfig>> {
    let mut base = match (&r.spec.run, &r.spec.schedule) {
        (Some(cfg), None) => match &r.spec.algorithms {
            Some(algs) => algs.iter().map(|&a| RunConfig { algorithm: a, ..cfg.clone() }).collect(),
            None => vec![cfg.clone()],
        },
        (None, Some(s)) => {
            if r.spec.algorithms.is_some() {
                bail!("a [schedule] fixes the algorithm; drop `algorithms`");
            }
            let lambda = o.lambda.unwrap_or(vrpg_core::policy::DEFAULT_DAMPING);
            let c = constants_for(r, lambda)?;
            let sched = theorem_schedule(s.which, &c, s.epsilon)?;
            if !sched.complete {
                bail!("schedule {:?} is incomplete: {}", s.which, sched.notes.join("; "));
            }
            let mut cfg = sched.skeleton(0);
            cfg.budget = s.budget;
            vec![cfg]
        }
        _ => bail!("spec needs a [run] or a [schedule] table"),
    };
    for c in &mut base {
        c.exact_adv |= o.exact_adv;
        if let Some(l) = o.lambda {
            c.lambda = l;
        }
        c.validate().with_context(|| format!("{} config", c.algorithm.name()))?;
    }
    Ok(base)
}

pub fn run_file_stem(cfg: &RunConfig) -> String {
    format!("{}_seed{}", cfg.algorithm.name(), cfg.seed)
}

/// Execute every (algorithm, seed) pair of a spec and write CSV + sidecar per
/// run, then `index.json` last.
pub fn cmd_run(spec_path: &Path, o: &Overrides) -> Result<RunIndex> {
    let r = load(spec_path, o)?;
    let base = base_configs(&r, o)?;
    let out = r.spec.out_dir(o.out.as_deref());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let lambda = base[0].lambda;
    if base.iter().any(|c| c.lambda != lambda) {
        bail!("all runs of a spec share one damping");
    }
    let oracle = TabularOracle::new(&r.mdp, &r.policy, lambda)?;

    r.mdp.save(&out.join("mdp.toml"))?;
    let pf = PolicyFile::new(family_of(&r.policy), r.theta0.clone())?;
    std::fs::write(out.join("policy.toml"), pf.to_toml())?;

    if let Some(n) = r.spec.dump_trajectories {
        for &seed in &r.spec.seeds {
            let sampler = Sampler::new(&r.mdp, &r.policy, seed);
            let lines: String = sampler
                .batch(&r.theta0, base[0].h, n)
                .iter()
                .map(|t| t.to_dump_line() + "\n")
                .collect();
            std::fs::write(out.join(format!("trajectories_seed{seed}.txt")), lines)?;
        }
    }

    let jobs: Vec<RunConfig> = base
        .iter()
        .flat_map(|c| r.spec.seeds.iter().map(move |&seed| RunConfig { seed, ..c.clone() }))
        .collect();
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<(usize, Result<IndexEntry>)>> = Mutex::new(Vec::new());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = jobs.get(i) else { break };
                let res = run(&r.mdp, &r.policy, Some(&oracle), &r.theta0, cfg)
                    .map_err(anyhow::Error::from)
                    .and_then(|res| write_run(&out, &res));
                done.lock().unwrap().push((i, res));
            });
        }
    });
    let mut done = done.into_inner().unwrap();
    done.sort_by_key(|(i, _)| *i);
    let runs = done
        .into_iter()
        .map(|(i, e)| e.with_context(|| format!("run {}", run_file_stem(&jobs[i]))))
        .collect::<Result<Vec<_>>>()?;

    let index = RunIndex { schema_version: INDEX_SCHEMA_VERSION, spec: r.spec.clone(), runs };
    std::fs::write(out.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(index)
}

fn write_run(out: &Path, res: &RunResult) -> Result<IndexEntry> {
    let stem = run_file_stem(&res.config);
    let (csv, sidecar) = (format!("{stem}.csv"), format!("{stem}.json"));
    std::fs::write(out.join(&csv), res.to_csv())?;
    std::fs::write(out.join(&sidecar), res.sidecar_json())?;
    Ok(IndexEntry {
        algorithm: res.config.algorithm.name().into(),
        seed: res.config.seed,
        csv,
        sidecar,
        truncated: res.truncated,
        trajectories: res.trajectories,
        updates: res.updates(),
        final_j: res.records.last().and_then(|x| x.j_exact),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantsOutput {
    pub constants: ConstantsReport,
    pub epsilon: f64,
    pub schedules: Vec<Schedule>,
    /// Schedules that could not be formed, with the reason.
    pub unavailable: Vec<(ScheduleKind, String)>,
}

/// Measure the problem constants and evaluate every theorem schedule.
pub fn cmd_constants(spec_path: &Path, o: &Overrides) -> Result<ConstantsOutput> {
    let r = load(spec_path, o)?;
    let lambda = o.lambda.or(r.spec.run.as_ref().map(|c| c.lambda)).unwrap_or(vrpg_core::policy::DEFAULT_DAMPING);
    let constants = constants_for(&r, lambda)?;
    let epsilon = schedule_epsilon(&r, o);
    let mut schedules = Vec::new();
    let mut unavailable = Vec::new();
    for which in ScheduleKind::ALL {
        match theorem_schedule(which, &constants, epsilon) {
            Ok(s) => schedules.push(s),
            Err(e) => unavailable.push((which, e.to_string())),
        }
    }
    let res = ConstantsOutput { constants, epsilon, schedules, unavailable };
    if let Some(dir) = &o.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("constants.json"), serde_json::to_string_pretty(&res)?)?;
    }
    Ok(res)
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifySummary {
    pub level: Level,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

/// Run the acceptance criteria. At full level also writes the constants and
/// global-gap audit JSON to `out`.
pub fn cmd_verify(level: Level, out: Option<&Path>, mut report: impl FnMut(&CriterionResult)) -> Result<VerifySummary> {
    let mut criteria = Vec::new();
    for id in 1..=9 {
        let c = run_criterion(id, level).expect("criteria 1..=9 exist");
        report(&c);
        criteria.push(c);
    }
    let passed = criteria.iter().all(|c| c.passed);
    let summary = VerifySummary { level, passed, criteria };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        if level == Level::Full {
            let audits = global_gap_audit(&[1, 2])?;
            let constants: Vec<_> = audits.iter().map(|a| &a.constants).collect();
            std::fs::write(dir.join("constants.json"), serde_json::to_string_pretty(&constants)?)?;
            std::fs::write(dir.join("audit.json"), serde_json::to_string_pretty(&audits)?)?;
        }
        std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(summary)
}
