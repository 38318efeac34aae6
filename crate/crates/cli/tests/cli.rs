use std::path::Path;
use std::process::Command;

use vrpg_cli::commands::{cmd_constants, cmd_run, Overrides};
use vrpg_cli::spec::{parse_seeds, ExperimentSpec, OUT_DIR_ENV};
use vrpg_core::algorithms::CSV_HEADER;
use vrpg_core::analysis::l_j_formula;
use vrpg_core::mdp::{chain2, TabularMdp};

const FOUR_ALGS: &str = r#"
seeds = [1, 2, 3]
algorithms = ["pg", "npg", "srvr_pg", "srvr_npg"]

[env]
kind = "chain2"

[run]
algorithm = "pg"
eta = 0.1
h = 20
k = 5
s = 2
m = 3
n = 20
b = 5
sgd = { iterations = 50 }
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vrpg"))
}

fn write_spec(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn out(dir: &Path) -> Overrides {
    Overrides { out: Some(dir.to_path_buf()), ..Default::default() }
}

#[test]
fn four_algorithms_three_seeds_give_twelve_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "spec.toml", FOUR_ALGS);
    let dir = tmp.path().join("out");
    let index = cmd_run(&spec, &out(&dir)).unwrap();
    assert_eq!(index.runs.len(), 12);
    let csvs: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert_eq!(csvs.len(), 12);
    for name in &csvs {
        let text = read(dir.join(name));
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        let sidecar: serde_json::Value = serde_json::from_str(&read(dir.join(name.replace(".csv", ".json")))).unwrap();
        assert_eq!(sidecar["schema_version"], 1);
    }
    let idx: serde_json::Value = serde_json::from_str(&read(dir.join("index.json"))).unwrap();
    assert_eq!(idx["runs"].as_array().unwrap().len(), 12);
    assert!(dir.join("srvr_npg_seed3.csv").exists());
}

#[test]
fn rerun_is_byte_identical_also_with_parallel_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "spec.toml", FOUR_ALGS);
    let par = write_spec(tmp.path(), "par.toml", &FOUR_ALGS.replace("[run]\n", "[run]\nparallel = true\n"));
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    cmd_run(&spec, &out(&a)).unwrap();
    cmd_run(&spec, &out(&b)).unwrap();
    cmd_run(&par, &out(&c)).unwrap();
    for alg in ["pg", "npg", "srvr_pg", "srvr_npg"] {
        for seed in 1..=3 {
            let f = format!("{alg}_seed{seed}.csv");
            assert_eq!(read(a.join(&f)), read(b.join(&f)), "{f}");
            assert_eq!(read(a.join(&f)), read(c.join(&f)), "{f} parallel");
            let j = format!("{alg}_seed{seed}.json");
            assert_eq!(read(a.join(&j)), read(b.join(&j)));
        }
    }
}

#[test]
fn missing_mdp_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "spec.toml",
        &FOUR_ALGS.replace("kind = \"chain2\"", "kind = \"file\"\npath = \"no_such_mdp.toml\""),
    );
    let o = bin().args(["run", "--spec"]).arg(&spec).arg("--out").arg(tmp.path().join("o")).output().unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no_such_mdp.toml"), "{err}");
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(ExperimentSpec::from_toml(&FOUR_ALGS.replace("seeds = [1, 2, 3]", "seeds = []")).is_err());
    assert!(ExperimentSpec::from_toml(&FOUR_ALGS.replace("eta = 0.1", "eta = 0.1\nbogus = 1").replace("[run]", "[wat]")).is_err());
    let no_run = FOUR_ALGS.split("[run]").next().unwrap();
    let spec = ExperimentSpec::from_toml(no_run).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let p = write_spec(tmp.path(), "s.toml", no_run);
    assert!(cmd_run(&p, &out(tmp.path())).is_err());
    assert_eq!(spec.seeds, vec![1, 2, 3]);
    assert_eq!(parse_seeds("4, 5,6").unwrap(), vec![4, 5, 6]);
    assert!(parse_seeds("4,x").is_err());
    let bad_eta = write_spec(tmp.path(), "b.toml", &FOUR_ALGS.replace("eta = 0.1", "eta = -0.1"));
    let o = bin().args(["run", "--spec"]).arg(&bad_eta).arg("--out").arg(tmp.path()).output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn flags_override_the_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "spec.toml", FOUR_ALGS);
    let dir = tmp.path().join("o");
    let st = bin()
        .args(["run", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&dir)
        .args(["--seeds", "7,8", "--exact-adv", "--lambda", "0.01"])
        .status()
        .unwrap();
    assert!(st.success());
    assert!(dir.join("npg_seed7.csv").exists() && dir.join("pg_seed8.csv").exists());
    assert!(!dir.join("pg_seed1.csv").exists());
    let side: serde_json::Value = serde_json::from_str(&read(dir.join("npg_seed7.json"))).unwrap();
    assert_eq!(side["config"]["exact_adv"], true);
    assert_eq!(side["config"]["lambda"], 0.01);
}

#[test]
fn environment_variable_sets_the_default_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "spec.toml", FOUR_ALGS);
    let dir = tmp.path().join("from_env");
    let st = bin().args(["run", "--spec"]).arg(&spec).args(["--seeds", "1"]).env(OUT_DIR_ENV, &dir).status().unwrap();
    assert!(st.success());
    assert!(dir.join("index.json").exists());
}

#[test]
fn budget_exhaustion_is_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "spec.toml", &FOUR_ALGS.replace("k = 5", "k = 5\nbudget = 75"));
    let dir = tmp.path().join("o");
    let idx = cmd_run(&spec, &out(&dir)).unwrap();
    let pg = idx.runs.iter().find(|r| r.algorithm == "pg").unwrap();
    assert!(pg.truncated && pg.updates == 3);
    let side: serde_json::Value = serde_json::from_str(&read(dir.join("pg_seed1.json"))).unwrap();
    assert_eq!(side["truncated"], true);
}

#[test]
fn mdp_file_round_trips_through_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "spec.toml", &format!("dump_trajectories = 4\n{FOUR_ALGS}"));
    let a = tmp.path().join("a");
    cmd_run(&spec, &out(&a)).unwrap();
    let text = read(a.join("mdp.toml"));
    let m = TabularMdp::from_toml(&text).unwrap();
    assert_eq!(m, chain2());
    assert_eq!(m.to_toml(), text);
    // the same problem loaded from its file gives the same runs
    let from_file = write_spec(
        tmp.path(),
        "file.toml",
        &FOUR_ALGS.replace("kind = \"chain2\"", "kind = \"file\"\npath = \"a/mdp.toml\"")
            .replace("[env]", "policy_file = \"a/policy.toml\"\n\n[env]"),
    );
    let b = tmp.path().join("b");
    cmd_run(&from_file, &out(&b)).unwrap();
    assert_eq!(read(a.join("srvr_pg_seed2.csv")), read(b.join("srvr_pg_seed2.csv")));
    let dump = read(a.join("trajectories_seed1.txt"));
    assert_eq!(dump.lines().count(), 4);
    for line in dump.lines() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let h: usize = tokens[0].parse().unwrap();
        assert_eq!(h, 20);
        assert_eq!(tokens.len(), 1 + 3 * h);
    }
}

#[test]
fn constants_report_theorem_stepsizes() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "spec.toml", &format!("epsilon = 0.1\n{FOUR_ALGS}"));
    let r = cmd_constants(&spec, &Overrides::default()).unwrap();
    let c = &r.constants;
    let lj = l_j_formula(2f64.sqrt(), 1.0, 1.0, 0.9);
    assert_eq!(c.l_j, lj);
    let eta: Vec<f64> = r.schedules.iter().take(4).map(|s| s.eta).collect();
    let (g, mu) = (c.g, c.mu_f);
    let want = [1.0 / (4.0 * lj), mu * mu / (4.0 * g * g * lj), 1.0 / (8.0 * lj), mu / (16.0 * lj)];
    for (a, b) in eta.iter().zip(want) {
        assert!((a - b).abs() <= 1e-15 * b, "{a} vs {b}");
    }
    assert!(r.schedules.iter().all(|s| s.complete));
    assert_eq!(r.epsilon, 0.1);

    // same seed, same report
    let o1 = bin().args(["constants", "--spec"]).arg(&spec).output().unwrap();
    let o2 = bin().args(["constants", "--spec"]).arg(&spec).output().unwrap();
    assert!(o1.status.success());
    assert_eq!(o1.stdout, o2.stdout);

    // no variance probes: schedules that need sigma^2 are incomplete
    let bare = write_spec(tmp.path(), "bare.toml", &format!("{FOUR_ALGS}\n[probe]\nreplications = 0\n"));
    let r = cmd_constants(&bare, &Overrides::default()).unwrap();
    assert!(r.constants.sigma2_hat.is_none());
    let thm1 = &r.schedules[0];
    assert!(!thm1.complete);
}

#[test]
fn schedule_spec_drives_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
seeds = [5]
[env]
kind = "chain2"
[schedule]
which = "stationary_e1"
epsilon = 0.5
budget = 3000
[probe]
replications = 50
"#;
    let spec = write_spec(tmp.path(), "spec.toml", text);
    let idx = cmd_run(&spec, &out(tmp.path())).unwrap();
    assert_eq!(idx.runs.len(), 1);
    assert!(idx.runs[0].truncated);
    assert!(idx.runs[0].trajectories <= 3000);
}

#[test]
fn verify_rejects_unknown_level() {
    let o = bin().args(["verify", "--level", "medium"]).output().unwrap();
    assert!(!o.status.success());
}
