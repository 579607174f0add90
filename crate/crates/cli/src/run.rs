use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use submodcur::bench::{bench_greedy, write_bench_csv, BenchRow};
use submodcur::data::{gaussian_blobs, read_binary, read_csv, FeatureSet};
use submodcur::simlab::{
    arms_from_gaps, check_counting_lemma, check_integral_bounds, simulate_regret, spread_gaps, CountingReport,
    IntegralReport, RegretCurve,
};
use submodcur::trainer::{run_online_submod, StepRecord};
use submodcur::bandit::ExplorationSchedule;

use crate::config::{BenchConfig, DataConfig, DataFormat, ExperimentConfig, Mode, SimulateConfig};
use crate::CliError;

pub const STEPS_FILE: &str = "steps.jsonl";
pub const REGRET_FILE: &str = "regret.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ECHO_FILE: &str = "config.echo";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BENCH_FILE: &str = "bench.csv";

/// Target band for the fitted log-log regret slope.
pub const SLOPE_BAND: (f64, f64) = (-1.2, -0.35);
/// Required decay of mean regret from the window start to the horizon.
pub const DECAY_RATIO: f64 = 0.1;

fn runtime(context: &str) -> impl Fn(submodcur::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn read_features(field: &str, path: &Path, format: Option<DataFormat>) -> Result<FeatureSet, CliError> {
    let format = format.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
        _ => DataFormat::Smcf,
    });
    let loaded = match format {
        DataFormat::Csv => read_csv(path),
        DataFormat::Smcf => read_binary(path),
    };
    loaded.map_err(|e| CliError::Invalid(format!("{field}: {}: {e}", path.display())))
}

/// Loads (train, validation) with a shared class count.
pub fn load_data(data: &DataConfig, seed: u64) -> Result<(FeatureSet, FeatureSet), CliError> {
    let all = match (&data.train, &data.synthetic) {
        (Some(path), _) => read_features("data.train", path, data.format)?,
        (None, Some(s)) => gaussian_blobs(s.n, s.d, s.separation, seed)
            .map_err(|e| CliError::Invalid(format!("data.synthetic: {e}")))?,
        (None, None) => return Err(CliError::Invalid("data.train: no training data configured".into())),
    };
    let (train, val) = match &data.val {
        Some(path) => (all, read_features("data.val", path, data.format)?),
        None => {
            let n = all.len();
            let n_val = ((n as f64 * data.val_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
            if n < 2 {
                return Err(CliError::Invalid("data.train: need at least 2 samples to hold out validation".into()));
            }
            let split = |r: std::ops::Range<usize>| {
                all.subset(&r.collect::<Vec<_>>())
                    .map_err(|e| CliError::Invalid(format!("data.val_fraction: {e}")))
            };
            (split(0..n - n_val)?, split(n - n_val..n)?)
        }
    };
    if train.d_feat() != val.d_feat() {
        return Err(CliError::Invalid(format!(
            "data.val: feature width {} differs from training width {}",
            val.d_feat(),
            train.d_feat()
        )));
    }
    let classes = train.n_classes().max(val.n_classes());
    let widen = |s: FeatureSet| s.with_n_classes(classes).map_err(|e| CliError::Invalid(format!("data: {e}")));
    Ok((widen(train)?, widen(val)?))
}

/// What a mode produced, for the summary.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Train { records: Vec<StepRecord>, n_arms: usize },
    Simulate { regret: RegretSummary },
    Verify { all_bounds_hold: bool },
    Bench { rows: Vec<BenchRow> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretSummary {
    pub horizon: usize,
    pub runs: usize,
    pub slope_window: [usize; 2],
    pub slope: Option<f64>,
    pub mean_at_start: f64,
    pub mean_at_end: f64,
    pub end_to_start_ratio: Option<f64>,
}

impl RegretSummary {
    fn from_curve(c: &RegretCurve, from: usize) -> Self {
        let (start, end) = (c.at(from), c.at(c.horizon));
        Self {
            horizon: c.horizon,
            runs: c.runs,
            slope_window: [from, c.horizon],
            slope: c.log_log_slope(from, c.horizon),
            mean_at_start: start,
            mean_at_end: end,
            end_to_start_ratio: (start > 0.0).then(|| end / start),
        }
    }

    fn assertions(&self) -> Vec<Assertion> {
        let in_band = self.slope.is_some_and(|s| s >= SLOPE_BAND.0 && s <= SLOPE_BAND.1);
        let decays = self.end_to_start_ratio.is_some_and(|r| r < DECAY_RATIO);
        vec![
            Assertion {
                name: "regret_slope_in_band",
                empirical: json!(self.slope),
                theoretical: json!([SLOPE_BAND.0, SLOPE_BAND.1]),
                pass: in_band,
            },
            Assertion {
                name: "regret_decay_ratio",
                empirical: json!(self.end_to_start_ratio),
                theoretical: json!(DECAY_RATIO),
                pass: decays,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: &'static str,
    pub empirical: Value,
    pub theoretical: Value,
    pub pass: bool,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn config_json(cfg: &ExperimentConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes to JSON")
}

pub fn write_steps(path: &Path, records: &[StepRecord]) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| CliError::Runtime(e.to_string()))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn simulate_curve(s: &SimulateConfig, schedule: &ExplorationSchedule, seed: u64) -> Result<RegretCurve, CliError> {
    let arms = arms_from_gaps(s.best_mean, &spread_gaps(s.k, s.gap_floor), s.noise_sd).map_err(runtime("simulate"))?;
    simulate_regret(&arms, s.gap_floor, schedule, s.horizon, s.runs, seed, s.feedback).map_err(runtime("simulate"))
}

fn write_curve(dir: &Path, curve: &RegretCurve) -> Result<(), CliError> {
    let path = dir.join(REGRET_FILE);
    let file = File::create(&path).map_err(io_err(&path))?;
    curve.write_csv(BufWriter::new(file)).map_err(runtime(REGRET_FILE))
}

fn run_train(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let (train, val) = load_data(&cfg.data, cfg.seed)?;
    let tc = cfg.trainer.to_train_config(cfg.seed);
    let out = run_online_submod(&train, &val, &tc, &cfg.schedule, &cfg.arms).map_err(runtime("train"))?;
    write_steps(&dir.join(STEPS_FILE), &out.records)?;
    Ok(Outcome::Train { records: out.records, n_arms: cfg.arms.len() })
}

fn run_simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let curve = simulate_curve(&cfg.simulate, &cfg.schedule, cfg.seed)?;
    write_curve(dir, &curve)?;
    let regret = RegretSummary::from_curve(&curve, cfg.simulate.slope_from);
    let report = json!({
        "mode": cfg.mode,
        "config": config_json(cfg),
        "regret": regret,
        "assertions": regret.assertions(),
    });
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(Outcome::Simulate { regret })
}

fn counting_assertion(r: &CountingReport) -> Assertion {
    Assertion {
        name: "uniform_pull_bound",
        empirical: json!(r.checkpoints.iter().map(|c| c.satisfaction_rate).collect::<Vec<_>>()),
        theoretical: json!(r.checkpoints.iter().map(|c| c.probability_floor).collect::<Vec<_>>()),
        pass: r.pass,
    }
}

fn integral_assertion(r: &IntegralReport) -> Assertion {
    Assertion {
        name: "integral_lower_bounds",
        empirical: json!({"min_slack_constant": r.min_slack_constant, "min_slack_growing": r.min_slack_growing}),
        theoretical: json!(-submodcur::simlab::SLACK_TOL),
        pass: r.all_hold,
    }
}

fn run_verify(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let c = &cfg.verify.counting;
    let counting_schedule = ExplorationSchedule::constant(c.epsilon, c.pi).map_err(runtime("verify.counting"))?;
    let counting = check_counting_lemma(c.k, &counting_schedule, &c.checkpoints, c.runs, cfg.seed)
        .map_err(runtime("verify.counting"))?;
    let integrals = check_integral_bounds(&cfg.verify.grid).map_err(runtime("verify.grid"))?;
    let curve = simulate_curve(&cfg.simulate, &cfg.schedule, cfg.seed)?;
    write_curve(dir, &curve)?;
    let regret = RegretSummary::from_curve(&curve, cfg.simulate.slope_from);

    let mut assertions = vec![counting_assertion(&counting), integral_assertion(&integrals)];
    assertions.extend(regret.assertions());
    let all_bounds_hold = assertions.iter().all(|a| a.pass);
    let report = json!({
        "mode": cfg.mode,
        "config": config_json(cfg),
        "counting": counting,
        "integrals": integrals,
        "regret": regret,
        "assertions": assertions,
        "all_bounds_hold": all_bounds_hold,
    });
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(Outcome::Verify { all_bounds_hold })
}

pub fn run_bench(bench: &BenchConfig, seed: u64) -> Result<Vec<BenchRow>, CliError> {
    crate::config::validate_bench(bench)?;
    bench_greedy(&bench.sizes, bench.budget, &bench.kinds, seed).map_err(runtime("bench"))
}

pub fn write_bench(path: &Path, rows: &[BenchRow]) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_bench_csv(rows, BufWriter::new(file)).map_err(runtime(BENCH_FILE))
}

fn summary(cfg: &ExperimentConfig, outcome: &Outcome, wall: f64) -> Value {
    let detail = match outcome {
        Outcome::Train { records, n_arms } => {
            let mut pulls = vec![0usize; *n_arms];
            for a in records.iter().filter_map(|r| r.arm) {
                pulls[a] += 1;
            }
            let last = records.last();
            json!({
                "steps": records.len(),
                "final_val_loss": last.map(|r| r.val_loss),
                "final_val_acc": last.map(|r| r.val_acc),
                "arm_pulls": pulls,
            })
        }
        Outcome::Simulate { regret } => json!({
            "regret_slope": regret.slope,
            "mean_regret_at_horizon": regret.mean_at_end,
        }),
        Outcome::Verify { all_bounds_hold } => json!({ "all_bounds_hold": all_bounds_hold }),
        Outcome::Bench { rows } => json!({ "rows": rows.len() }),
    };
    json!({
        "mode": cfg.mode,
        "seed": cfg.seed,
        "metrics": detail,
        "wall_clock_s": wall,
    })
}

/// Executes a validated config, writing every artifact under `cfg.out`.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let dir = cfg.out.as_path();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let echo = dir.join(ECHO_FILE);
    fs::write(&echo, cfg.to_toml()).map_err(io_err(&echo))?;
    let outcome = match cfg.mode {
        Mode::Train => run_train(cfg, dir)?,
        Mode::Simulate => run_simulate(cfg, dir)?,
        Mode::VerifyTheory => run_verify(cfg, dir)?,
        Mode::BenchGreedy => {
            let rows = run_bench(&cfg.bench, cfg.seed)?;
            write_bench(&dir.join(BENCH_FILE), &rows)?;
            Outcome::Bench { rows }
        }
    };
    let wall = started.elapsed().as_secs_f64();
    write_json(&dir.join(SUMMARY_FILE), &summary(cfg, &outcome, wall))?;
    Ok(outcome)
}
