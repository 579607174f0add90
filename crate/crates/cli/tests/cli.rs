use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use submodcur::data::{encode_binary, gaussian_blobs, write_csv};
use submodcur_cli::{ExperimentConfig, Overrides};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_submodcur"));
    c.env_remove("SUBMODCUR_SEED");
    c
}

fn run_config(dir: &Path, name: &str, text: &str, extra: &[&str]) -> Output {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    bin().arg("run").arg(&path).args(extra).current_dir(dir).output().unwrap()
}

fn write_data(dir: &Path) {
    let set = gaussian_blobs(150, 4, 2.0, 7).unwrap();
    write_csv(&set, fs::File::create(dir.join("train.csv")).unwrap()).unwrap();
    let val = gaussian_blobs(30, 4, 2.0, 8).unwrap();
    fs::write(dir.join("val.smcf"), encode_binary(&val)).unwrap();
}

const TRAIN: &str = r#"
mode = "train"
seed = 4
out = "a"

[data]
train = "train.csv"
val = "val.smcf"

[trainer]
budget_frac = 1.0
batch_size = 32
epochs = 3

[[arms]]
kind = "facility-location"

[[arms]]
kind = "gcmi"
"#;

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

fn set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn minimal_train_run_emits_one_record_per_step() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let out = run_config(dir.path(), "c.toml", TRAIN, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let steps = fs::read_to_string(dir.path().join("a/steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 3 * 150usize.div_ceil(32));
    for line in steps.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(
            keys(&v),
            set(&["t", "arm", "branch", "xi_raw", "xi", "rewards", "subset", "train_loss", "val_loss", "val_acc"])
        );
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(keys(&summary), set(&["mode", "seed", "metrics", "wall_clock_s"]));
    assert_eq!(summary["metrics"]["steps"], 15);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let cfg = TRAIN.replace("budget_frac = 1.0", "budget_frac = 0.25\nfeedback = \"bandit\"\nhessian = \"fim-ema\"");
    let files = ["steps.jsonl", "config.echo"];
    assert!(run_config(dir.path(), "c.toml", &cfg, &["--out", "x"]).status.success());
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(dir.path().join("x").join(f)).unwrap()).collect();
    assert!(run_config(dir.path(), "c.toml", &cfg, &["--out", "x"]).status.success());
    for (f, a) in files.iter().zip(&first) {
        assert!(*a == fs::read(dir.path().join("x").join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn echo_reloads_to_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let path = dir.path().join("c.toml");
    fs::write(&path, TRAIN).unwrap();
    let overrides = Overrides { out: Some(dir.path().join("o")), mode: None, env_seed: Some("99".into()) };
    let cfg = ExperimentConfig::load(&path, &overrides).unwrap();
    assert_eq!(cfg.seed, 99);
    submodcur_cli::execute(&cfg).unwrap();
    let again = ExperimentConfig::load(&dir.path().join("o/config.echo"), &Overrides::default()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn env_seed_overrides_file_seed() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let path = dir.path().join("c.toml");
    fs::write(&path, TRAIN).unwrap();
    let out = bin().args(["run"]).arg(&path).env("SUBMODCUR_SEED", "123").current_dir(dir.path()).output().unwrap();
    assert!(out.status.success());
    let echo = fs::read_to_string(dir.path().join("a/config.echo")).unwrap();
    assert!(echo.contains("seed = 123"));
}

#[test]
fn validation_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let cases = [
        (TRAIN.replace("gcmi", "submarine"), "submarine"),
        (TRAIN.replace("epochs = 3", "epochs = 3\nbudget_frac = 0.0").replace("budget_frac = 1.0\n", ""), "budget_frac"),
        (TRAIN.replace("train.csv", "missing.csv"), "data.train"),
        (format!("{TRAIN}\n[schedule.lambda]\nkind = \"constant\"\nepsilon = 2.0\n"), "schedule"),
    ];
    for (text, needle) in cases {
        let out = run_config(dir.path(), "bad.toml", &text, &[]);
        assert_eq!(out.status.code(), Some(1), "{needle}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{needle}: {err}");
    }
    let out = run_config(dir.path(), "c.toml", TRAIN, &["--mode", "dance"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    fs::write(dir.path().join("blocked"), "a file, not a directory").unwrap();
    let out = run_config(dir.path(), "c.toml", TRAIN, &["--out", "blocked"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_mode_writes_curve_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "mode = \"simulate\"\nout = \"s\"\n[simulate]\nhorizon = 500\nruns = 20\n";
    let out = run_config(dir.path(), "s.toml", cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("s/regret.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,mean_regret,stderr"));
    assert_eq!(csv.lines().count(), 501);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s/report.json")).unwrap()).unwrap();
    assert_eq!(keys(&report), set(&["mode", "config", "regret", "assertions"]));
    assert_eq!(report["regret"]["slope_window"], serde_json::json!([100, 500]));
}

#[test]
fn verify_theory_reports_every_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "mode = \"verify-theory\"\nout = \"v\"\n[simulate]\nhorizon = 1000\nruns = 20\n[verify.counting]\nruns = 50\ncheckpoints = [100, 1000]\n";
    let out = run_config(dir.path(), "v.toml", cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("v/report.json")).unwrap()).unwrap();
    assert_eq!(
        keys(&report),
        set(&["mode", "config", "counting", "integrals", "regret", "assertions", "all_bounds_hold"])
    );
    let names: Vec<&str> = report["assertions"].as_array().unwrap().iter().map(|a| a["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["uniform_pull_bound", "integral_lower_bounds", "regret_slope_in_band", "regret_decay_ratio"]);
    // the growing-λ bound holds on the whole default grid; the constant-λ one
    // is violated at small t (see the integral tests in the core crate)
    assert!(report["integrals"]["min_slack_growing"].as_f64().unwrap() >= -1e-6);
    let all = report["assertions"].as_array().unwrap().iter().all(|a| a["pass"].as_bool().unwrap());
    assert_eq!(report["all_bounds_hold"].as_bool(), Some(all));
}

#[test]
fn bench_subcommand_prints_csv() {
    let out = bin().args(["bench-greedy", "--sizes", "16,64", "--budget", "0.25", "--kinds", "fl,gc,logdet"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kind,n,beta,kernel_ms,lazy_ms,naive_ms,lazy_evals,naive_evals"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        let (lazy, naive): (usize, usize) = (r[6].parse().unwrap(), r[7].parse().unwrap());
        assert!(lazy <= naive);
    }
    let bad = bin().args(["bench-greedy", "--sizes", "0"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let bad = bin().args(["bench-greedy", "--kinds", "zz"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn bench_mode_through_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "mode = \"bench-greedy\"\nout = \"b\"\n[bench]\nsizes = [32]\nbudget = 0.2\nkinds = [\"fl\", \"com\"]\n";
    let out = run_config(dir.path(), "b.toml", cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("b/bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
