use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use submodcur::bandit::ExplorationSchedule;
use submodcur::reward::HessianKind;
use submodcur::simlab::{IntegralGrid, SimFeedback};
use submodcur::submod::ObjectiveKind;
use submodcur::trainer::{Arch, ArmSpec, Feedback, LrSchedule, Strategy, TrainConfig};

use crate::CliError;

/// Environment variable that overrides `seed` (env wins over file).
pub const SEED_ENV: &str = "SUBMODCUR_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Simulate,
    VerifyTheory,
    BenchGreedy,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Mode::Train),
            "simulate" => Some(Mode::Simulate),
            "verify-theory" => Some(Mode::VerifyTheory),
            "bench-greedy" => Some(Mode::BenchGreedy),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Simulate => "simulate",
            Mode::VerifyTheory => "verify-theory",
            Mode::BenchGreedy => "bench-greedy",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Csv,
    Smcf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub n: usize,
    pub d: usize,
    /// Distance between the two class means, in units of the noise sd.
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Inferred from the file extension when absent.
    pub format: Option<DataFormat>,
    /// Tail fraction of the training file held out when `val` is absent.
    pub val_fraction: f64,
    pub synthetic: Option<SyntheticData>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train: None, val: None, format: None, val_fraction: 0.2, synthetic: None }
    }
}

/// Trainer knobs; the seed comes from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub arch: Arch,
    pub lr: LrSchedule,
    pub budget_frac: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warm_start_epochs: usize,
    pub val_points: usize,
    pub feedback: Feedback,
    pub hessian: HessianKind,
    pub fim_momentum: f64,
    pub strategy: Strategy,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let base = TrainConfig::new(0.1, 0.3, 64, 20, 0);
        Self {
            arch: base.arch,
            lr: base.lr,
            budget_frac: base.budget_frac,
            batch_size: base.batch_size,
            epochs: base.epochs,
            warm_start_epochs: base.warm_start_epochs,
            val_points: base.val_points,
            feedback: base.feedback,
            hessian: base.hessian,
            fim_momentum: base.fim_momentum,
            strategy: base.strategy,
        }
    }
}

impl TrainerSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            arch: self.arch,
            lr: self.lr,
            budget_frac: self.budget_frac,
            batch_size: self.batch_size,
            epochs: self.epochs,
            warm_start_epochs: self.warm_start_epochs,
            val_points: self.val_points,
            seed,
            feedback: self.feedback,
            hessian: self.hessian,
            fim_momentum: self.fim_momentum,
            strategy: self.strategy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub k: usize,
    pub best_mean: f64,
    /// Gap floor ϱ; suboptimal gaps are spread over `[floor, 2·floor]`.
    pub gap_floor: f64,
    pub noise_sd: f64,
    pub horizon: usize,
    pub runs: usize,
    pub feedback: SimFeedback,
    /// Slope window start (earlier steps are treated as transient).
    pub slope_from: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            k: 5,
            best_mean: 1.0,
            gap_floor: 0.2,
            noise_sd: 0.1,
            horizon: 10_000,
            runs: 200,
            feedback: SimFeedback::Bandit,
            slope_from: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountingConfig {
    pub k: usize,
    pub epsilon: f64,
    pub pi: f64,
    pub checkpoints: Vec<u64>,
    pub runs: usize,
}

impl Default for CountingConfig {
    fn default() -> Self {
        Self { k: 5, epsilon: 0.5, pi: 0.5, checkpoints: vec![100, 1_000, 10_000], runs: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub counting: CountingConfig,
    pub grid: IntegralGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub budget: f64,
    pub kinds: Vec<ObjectiveKind>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![64, 256, 1024],
            budget: 0.1,
            kinds: vec![ObjectiveKind::FacilityLocation, ObjectiveKind::GraphCut, ObjectiveKind::LogDeterminant],
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_schedule() -> ExplorationSchedule {
    ExplorationSchedule::constant(0.5, 1.5).expect("default schedule is valid")
}

/// Fully-resolved experiment description. Every default is materialized,
/// so the echo written next to the artifacts reloads to an equal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_schedule")]
    pub schedule: ExplorationSchedule,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub arms: Vec<ArmSpec>,
}

/// Command-line overrides applied after the file is read.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
    /// Raw value of [`SEED_ENV`], if set.
    pub env_seed: Option<String>,
}

impl ExperimentConfig {
    /// Parses TOML text; relative data paths are joined onto `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        for p in [&mut cfg.data.train, &mut cfg.data.val].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("config file {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, base)?;
        if let Some(raw) = &overrides.env_seed {
            cfg.seed = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Invalid(format!("{SEED_ENV}: expected an unsigned integer, got {raw:?}")))?;
        }
        if let Some(mode) = overrides.mode {
            cfg.mode = mode;
        }
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        cfg.resolve_paths()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes data paths absolute so the echo is location-independent.
    fn resolve_paths(&mut self) -> Result<(), CliError> {
        for (field, p) in [("data.train", &mut self.data.train), ("data.val", &mut self.data.val)] {
            if let Some(path) = p {
                let abs = path
                    .canonicalize()
                    .map_err(|e| CliError::Invalid(format!("{field}: cannot read {}: {e}", path.display())))?;
                *path = abs;
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Invalid(format!("{field}: {msg}")));
        self.schedule.validate().or_else(|e| bad("schedule", e.to_string()))?;
        match self.mode {
            Mode::Train => {
                if self.arms.is_empty() {
                    return bad("arms", "at least one arm is required in train mode".into());
                }
                for (i, arm) in self.arms.iter().enumerate() {
                    arm.params.validate().or_else(|e| bad(&format!("arms[{i}].params"), e.to_string()))?;
                }
                self.trainer
                    .to_train_config(self.seed)
                    .validate()
                    .or_else(|e| bad("trainer", e.to_string()))?;
                let d = &self.data;
                match (&d.train, &d.synthetic) {
                    (None, None) => return bad("data.train", "a training file or data.synthetic is required".into()),
                    (Some(_), Some(_)) => return bad("data.synthetic", "cannot be combined with data.train".into()),
                    (None, Some(s)) => {
                        if s.n < 2 || s.d == 0 {
                            return bad("data.synthetic", format!("need n ≥ 2 and d ≥ 1, got n={} d={}", s.n, s.d));
                        }
                        if !(s.separation.is_finite() && s.separation >= 0.0) {
                            return bad("data.synthetic.separation", format!("must be finite and ≥ 0, got {}", s.separation));
                        }
                        if d.val.is_some() {
                            return bad("data.val", "synthetic data is split by data.val_fraction".into());
                        }
                    }
                    (Some(_), None) => {}
                }
                if d.val.is_none() && !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
                    return bad("data.val_fraction", format!("must lie in (0, 1), got {}", d.val_fraction));
                }
            }
            Mode::Simulate | Mode::VerifyTheory => {
                let s = &self.simulate;
                if s.k == 0 {
                    return bad("simulate.k", "must be at least 1".into());
                }
                if s.horizon == 0 || s.runs == 0 {
                    return bad("simulate", "horizon and runs must be at least 1".into());
                }
                if !(s.gap_floor.is_finite() && s.gap_floor >= 0.0) {
                    return bad("simulate.gap_floor", format!("must be finite and ≥ 0, got {}", s.gap_floor));
                }
                if !(s.noise_sd.is_finite() && s.noise_sd >= 0.0) {
                    return bad("simulate.noise_sd", format!("must be finite and ≥ 0, got {}", s.noise_sd));
                }
                if s.gap_floor == 0.0 && s.noise_sd > 0.0 && s.k > 1 {
                    return bad("simulate.gap_floor", "must be positive when rewards are noisy".into());
                }
                if !s.best_mean.is_finite() {
                    return bad("simulate.best_mean", "must be finite".into());
                }
                if s.slope_from == 0 || s.slope_from >= s.horizon {
                    return bad("simulate.slope_from", format!("must lie in [1, horizon), got {}", s.slope_from));
                }
                if self.mode == Mode::VerifyTheory {
                    let c = &self.verify.counting;
                    if c.k == 0 || c.runs == 0 {
                        return bad("verify.counting", "k and runs must be at least 1".into());
                    }
                    if !(c.epsilon > 0.0 && c.epsilon < 1.0) {
                        return bad("verify.counting.epsilon", format!("must lie in (0, 1), got {}", c.epsilon));
                    }
                    if !(c.pi > 0.0 && c.pi < 1.0) {
                        return bad("verify.counting.pi", format!("must lie in (0, 1), got {}", c.pi));
                    }
                    if c.checkpoints.is_empty() || c.checkpoints.iter().any(|&t| t < 3) {
                        return bad("verify.counting.checkpoints", "need at least one checkpoint, each ≥ 3".into());
                    }
                    let g = &self.verify.grid;
                    if g.epsilons.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
                        return bad("verify.grid.epsilons", "every value must lie in (0, 1)".into());
                    }
                    if g.rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
                        return bad("verify.grid.rates", "every value must be positive".into());
                    }
                    if g.pis.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
                        return bad("verify.grid.pis", "every value must lie in (0, 1)".into());
                    }
                    if g.ts.iter().any(|&t| !(t > 2.0 && t.is_finite())) {
                        return bad("verify.grid.ts", "every value must exceed 2".into());
                    }
                }
            }
            Mode::BenchGreedy => validate_bench(&self.bench)?,
        }
        Ok(())
    }
}

pub fn validate_bench(b: &BenchConfig) -> Result<(), CliError> {
    use submodcur::bench::MAX_BENCH_SIZE;
    if b.sizes.is_empty() || b.kinds.is_empty() {
        return Err(CliError::Invalid("bench: sizes and kinds must be non-empty".into()));
    }
    if let Some(&n) = b.sizes.iter().find(|&&n| n == 0 || n > MAX_BENCH_SIZE) {
        return Err(CliError::Invalid(format!("bench.sizes: {n} is outside [1, {MAX_BENCH_SIZE}]")));
    }
    if !(b.budget > 0.0 && b.budget <= 1.0) {
        return Err(CliError::Invalid(format!("bench.budget: must lie in (0, 1], got {}", b.budget)));
    }
    Ok(())
}
