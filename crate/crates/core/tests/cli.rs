use std::fs;
use std::path::Path;
use std::process::Command;

const PLAN: &str = r#"
seeds = [4]

[optimizer]
optimality = "CEM"
dist = "GMM(M=3)"
max_ent = true
kappa = 0.5

[planner]
samples = 60
rollouts = 1
iterations = 3
horizon = 10
init_variance = 0.01

[env]
task = "point_mass"

[analysis]
mpc_steps = 3
"#;

fn vimpc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vimpc")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn plan_writes_artifacts_for_requested_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "plan.toml", PLAN);
    let out = dir.path().join("out");
    let o = vimpc(&["plan", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "0-1,7", "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [0, 1, 7] {
        for f in ["diagnostics", "trace", "paths", "metrics", "mpc"] {
            assert!(out.join(format!("{f}_seed_{seed}.csv")).exists(), "{f} {seed}");
        }
    }
    assert!(!out.join("metrics_seed_4.csv").exists());
    let trace = fs::read_to_string(out.join("trace_seed_0.csv")).unwrap();
    // U + 1 snapshots, three components, T x 2 coordinates each
    assert_eq!(trace.lines().count(), 1 + 4 * 3 * 20);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("metric,mean,ci95,n\n"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mpc_goal_distance"));
}

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &PLAN.replace("samples = 60", "sample = 60"));
    let o = vimpc(&["plan", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("sample") && err.contains("line"), "{err}");
}

#[test]
fn missing_required_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &PLAN.replace("max_ent = true\n", ""));
    let o = vimpc(&["plan", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_ent"));
}

#[test]
fn fit_on_wrong_task_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "plan.toml", PLAN);
    let o = vimpc(&["fit", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_reproduces_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "plan.toml", PLAN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(vimpc(&["plan", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    let manifest = a.join("run_manifest.json");
    assert!(vimpc(&["replay", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.success());
    for f in ["summary.csv", "trace_seed_4.csv", "mpc_seed_4.csv", "metrics_seed_4.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_grid_has_a_column_per_kappa() {
    let dir = tempfile::tempdir().unwrap();
    let text = PLAN.replace("seeds = [4]", "mode = \"sweep\"\nseeds = [0]")
        + "\n[sweep]\nbase = \"plan_once\"\ncomponents = [1, 2]\nkappa = [0.0, 0.25, 0.5]\n";
    let cfg = write(dir.path(), "sweep.toml", &text);
    let out = dir.path().join("o");
    let o = vimpc(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = fs::read_to_string(out.join("sweep_grid.csv")).unwrap();
    assert_eq!(grid.lines().next().unwrap(), "components,metric,kappa=0,kappa=0.25,kappa=0.5");
    for cell in ["m1_kappa0", "m1_kappa0.5", "m2_kappa0.25"] {
        assert!(out.join(cell).join("metrics_seed_0.csv").exists(), "{cell}");
    }
}
