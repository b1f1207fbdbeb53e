use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
name = "cli"
algorithm = "both"
pairing = "fedavgm"
rounds = 4

[optimizer]
client_lr = 0.1
server_lr = 0.5

[data]
source = "synthetic"
input_dim = 5
num_classes = 3
samples_per_class = 20
holdout_per_class = 10

[partition]
num_clients = 4

[targets]
baseline_epochs = 3

[grid]
client_lrs = [0.05, 0.1]
server_lrs = [0.5]
rounds = 2

[sweep]
tau_epochs = [1, 2]
"#;

fn fdaopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdaopt"))
        .args(args)
        .current_dir(dir)
        .env_remove("FDAOPT_OUTPUT_DIR")
        .env("RUST_BACKTRACE", "0")
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_all_outputs() {
    let dir = setup();
    let out = fdaopt(dir.path(), &["run", "--config", "exp.toml", "--output-dir", "out"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["config.toml", "metrics.csv", "metrics.jsonl", "queries.csv", "summary.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f} missing");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FedAvgM") && stdout.contains("FDA-SGDM"), "{stdout}");
}

#[test]
fn set_overrides_and_echoes_resolved_config() {
    let dir = setup();
    let out = fdaopt(
        dir.path(),
        &["run", "-c", "exp.toml", "-o", "out", "--set", "partition.alpha=0.25", "--set", "rounds=2"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let resolved = std::fs::read_to_string(dir.path().join("out/config.toml")).unwrap();
    assert!(resolved.contains("alpha = 0.25"), "{resolved}");
    assert!(resolved.contains("rounds = 2"), "{resolved}");
    assert!(resolved.contains("depth = 7"), "defaults are echoed: {resolved}");
    let csv = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}

#[test]
fn env_var_sets_output_dir() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_fdaopt"))
        .args(["run", "-c", "exp.toml", "--set", "rounds=1"])
        .current_dir(dir.path())
        .env("FDAOPT_OUTPUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("from-env/metrics.csv").exists());
}

#[test]
fn config_errors_exit_nonzero_and_name_the_key() {
    let dir = setup();
    let out = fdaopt(dir.path(), &["run", "-c", "exp.toml", "--set", "partition.alpha=-1"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("partition.alpha"), "{}", stderr(&out));

    let out = fdaopt(dir.path(), &["run", "-c", "exp.toml", "--set", "partition.colour=3"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("colour"), "{}", stderr(&out));

    let out = fdaopt(dir.path(), &["run", "-c", "missing.toml"]);
    assert!(!out.status.success());

    let out = fdaopt(dir.path(), &["run", "-c", "exp.toml", "--set", "noequals"]);
    assert!(!out.status.success());
}

#[test]
fn grid_sweep_and_baseline_verbs() {
    let dir = setup();
    let out = fdaopt(dir.path(), &["grid", "-c", "exp.toml", "-o", "grid"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let grid = std::fs::read_to_string(dir.path().join("grid/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 2);

    let out = fdaopt(dir.path(), &["grid", "-c", "exp.toml", "-o", "grid2", "--client-lrs", "0.1", "--server-lrs", "0.1,0.2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let grid = std::fs::read_to_string(dir.path().join("grid2/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 2);

    let out = fdaopt(dir.path(), &["sweep-tau", "-c", "exp.toml", "-o", "sweep"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("sweep/sweep.csv").exists());

    let out = fdaopt(dir.path(), &["baseline", "-c", "exp.toml", "-o", "base", "--set", "seeds=[0, 1]"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json = std::fs::read_to_string(dir.path().join("base/baseline.json")).unwrap();
    assert_eq!(json.matches("baseline_accuracy").count(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup();
    let files = ["metrics.csv", "metrics.jsonl", "queries.csv", "summary.json", "config.toml"];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let out = fdaopt(dir.path(), &["run", "-c", "exp.toml", "-o", "out"]);
        assert!(out.status.success(), "{}", stderr(&out));
        let snap: Vec<Vec<u8>> = files
            .iter()
            .map(|f| std::fs::read(dir.path().join("out").join(f)).unwrap())
            .collect();
        snapshots.push(snap);
    }
    for (f, (a, b)) in files.iter().zip(snapshots[0].iter().zip(&snapshots[1])) {
        assert!(a == b, "{f} differs");
    }
}
