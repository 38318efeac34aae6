//! Experiment spec files.
//!
//! ```toml
//! seeds = [1, 2, 3]
//! algorithms = ["pg", "npg", "srvr_pg", "srvr_npg"]
//! out_dir = "runs/chain2"          # optional
//!
//! [env]
//! kind = "chain2"                  # or "random" (+ seed, n_states, n_actions) or "file" (+ path)
//!
//! [policy]                         # optional, defaults to softmax_tabular
//! family = "softmax_tabular"
//! n_states = 2
//! n_actions = 2
//!
//! [run]                            # a RunConfig; `algorithm` and `seed` are overridden per run
//! algorithm = "pg"
//! eta = 0.1
//! h = 50
//! k = 100
//! n = 100
//! ```
//!
//! Instead of `[run]`, a `[schedule]` table picks a theorem parameter choice:
//! `which = "stationary_e1"`, `epsilon = 0.1`, optional `budget`.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use vrpg_core::algorithms::{Algorithm, RunConfig, ScheduleKind};
use vrpg_core::analysis::ConstantsProbe;
use vrpg_core::mdp::{chain2, random_mdp, TabularMdp};
use vrpg_core::policy::{DiscreteFamily, PolicyFamily, PolicyFile, SoftmaxTabular};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "VRPG_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "vrpg-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Chain2,
    Random { seed: u64, n_states: usize, n_actions: usize },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub which: ScheduleKind,
    pub epsilon: f64,
    #[serde(default)]
    pub budget: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default = "default_extra")]
    pub extra: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_probe_h")]
    pub horizon: usize,
    #[serde(default = "default_reps")]
    pub replications: usize,
}

fn default_extra() -> usize {
    4
}
fn default_scale() -> f64 {
    1.0
}
fn default_probe_h() -> usize {
    10
}
fn default_reps() -> usize {
    200
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self { extra: default_extra(), scale: default_scale(), horizon: default_probe_h(), replications: default_reps() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub env: EnvSpec,
    #[serde(default)]
    pub policy: Option<PolicyFamily>,
    /// Policy family plus starting parameters, in the policy-file format.
    #[serde(default)]
    pub policy_file: Option<PathBuf>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub run: Option<RunConfig>,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    /// Runs one copy of the `[run]` config per listed algorithm.
    #[serde(default)]
    pub algorithms: Option<Vec<Algorithm>>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub probe: ProbeSpec,
    /// Epsilon for `constants` when no schedule is given.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Write this many trajectories at `theta0` per seed.
    #[serde(default)]
    pub dump_trajectories: Option<usize>,
}

/// A spec with every referenced file loaded.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub spec: ExperimentSpec,
    pub mdp: TabularMdp,
    pub policy: DiscreteFamily,
    pub theta0: Vec<f64>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).context("parsing experiment spec")?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
        let mut spec = Self::from_toml(&text).with_context(|| format!("in spec {}", path.display()))?;
        // relative paths inside a spec are relative to the spec file itself
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let EnvSpec::File { path } = &mut spec.env {
            rebase(path);
        }
        if let Some(p) = &mut spec.policy_file {
            rebase(p);
        }
        if let Some(p) = &mut spec.out_dir {
            rebase(p);
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.seeds.is_empty(), "seed list is empty");
        if self.run.is_some() && self.schedule.is_some() {
            bail!("give either [run] or [schedule], not both");
        }
        if self.policy.is_some() && self.policy_file.is_some() {
            bail!("give either [policy] or policy_file, not both");
        }
        if let Some(a) = &self.algorithms {
            ensure!(!a.is_empty(), "algorithm list is empty");
        }
        Ok(())
    }

    pub fn resolve(self) -> Result<Resolved> {
        let mdp = match &self.env {
            EnvSpec::Chain2 => chain2(),
            EnvSpec::Random { seed, n_states, n_actions } => random_mdp(*seed, *n_states, *n_actions)?,
            EnvSpec::File { path } => {
                ensure!(path.exists(), "MDP file {} does not exist", path.display());
                TabularMdp::load(path).with_context(|| format!("loading MDP file {}", path.display()))?
            }
        };
        let (family, file_theta) = match (&self.policy, &self.policy_file) {
            (_, Some(path)) => {
                ensure!(path.exists(), "policy file {} does not exist", path.display());
                let text = std::fs::read_to_string(path)?;
                let f = PolicyFile::from_toml(&text).with_context(|| format!("loading policy file {}", path.display()))?;
                (f.policy, Some(f.theta))
            }
            (Some(p), None) => (p.clone(), None),
            (None, None) => (PolicyFamily::SoftmaxTabular(SoftmaxTabular::new(mdp.n_states, mdp.n_actions)), None),
        };
        let policy = family.into_discrete().context("the CLI drives tabular MDPs")?;
        {
            use vrpg_core::policy::{DiscretePolicy, Policy};
            ensure!(
                policy.n_states() == mdp.n_states && policy.n_actions() == mdp.n_actions,
                "policy is for {}x{} but the MDP is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                mdp.n_states,
                mdp.n_actions
            );
        }
        let d = vrpg_core::policy::Policy::dim(&policy);
        let theta0 = self.theta0.clone().or(file_theta).unwrap_or_else(|| vec![0.0; d]);
        ensure!(theta0.len() == d, "theta0 has {} entries, the policy has {d} parameters", theta0.len());
        Ok(Resolved { spec: self, mdp, policy, theta0 })
    }

    /// `--out`, then the spec file, then the environment variable, then the default.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.out_dir {
            return p.clone();
        }
        default_out_dir()
    }
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

impl Resolved {
    pub fn probe(&self, seed: u64) -> ConstantsProbe {
        let p = &self.spec.probe;
        ConstantsProbe::around(&self.theta0, p.extra, p.scale, p.horizon, p.replications, seed)
    }
}

/// Parse a `--seeds 1,2,3` list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds = s
        .split(',')
        .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed {x:?}")))
        .collect::<Result<Vec<_>>>()?;
    ensure!(!seeds.is_empty(), "seed list is empty");
    Ok(seeds)
}
