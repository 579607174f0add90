//! Explore/exploit arm selection driven by an annealed threshold.
//!
//! At step `t` the threshold is `Ξ_t = t / (t + λ(t))^π(t)`, clamped to
//! `[0, 1]`. A uniform draw `ζ > Ξ_t` exploits (argmax over the latest arm
//! rewards); otherwise an arm is drawn uniformly. The first `K` steps pull
//! each arm once in order, since there is nothing to exploit yet.

use rand::Rng;
use rand::SeedableRng;
use rand_distr::Open01;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exploration dampening `λ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LambdaSchedule {
    /// `λ(t) = ε`
    Constant { epsilon: f64 },
    /// `λ(t) = 1 − e^{−rate·t}`
    ExpGrow { rate: f64 },
    /// `λ(t) = e^{−rate·t}`
    ExpDecay { rate: f64 },
}

impl LambdaSchedule {
    pub fn at(&self, t: u64) -> f64 {
        let t = t as f64;
        match *self {
            LambdaSchedule::Constant { epsilon } => epsilon,
            LambdaSchedule::ExpGrow { rate } => -(-rate * t).exp_m1(),
            LambdaSchedule::ExpDecay { rate } => (-rate * t).exp(),
        }
    }
}

/// Exploration sharpness `π(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PiSchedule {
    Constant { value: f64 },
    /// Piecewise constant: the entry with the largest start `≤ t` applies.
    Table { steps: Vec<(u64, f64)> },
}

impl PiSchedule {
    pub fn at(&self, t: u64) -> f64 {
        match self {
            PiSchedule::Constant { value } => *value,
            PiSchedule::Table { steps } => steps
                .iter()
                .take_while(|(start, _)| *start <= t)
                .last()
                .or_else(|| steps.first())
                .map(|(_, v)| *v)
                .unwrap_or(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationSchedule {
    pub lambda: LambdaSchedule,
    pub pi: PiSchedule,
}

impl ExplorationSchedule {
    pub fn constant(epsilon: f64, pi: f64) -> Result<Self> {
        let s = Self { lambda: LambdaSchedule::Constant { epsilon }, pi: PiSchedule::Constant { value: pi } };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self.lambda {
            LambdaSchedule::Constant { epsilon } => {
                if !(epsilon > 0.0 && epsilon < 1.0) {
                    return Err(Error::InvalidInput(format!("schedule epsilon must lie in (0, 1), got {epsilon}")));
                }
            }
            LambdaSchedule::ExpGrow { rate } | LambdaSchedule::ExpDecay { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::InvalidInput(format!("schedule rate must be positive, got {rate}")));
                }
            }
        }
        let check_pi = |v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("schedule pi must be positive, got {v}")))
            }
        };
        match &self.pi {
            PiSchedule::Constant { value } => check_pi(*value)?,
            PiSchedule::Table { steps } => {
                if steps.is_empty() {
                    return Err(Error::InvalidInput("pi table is empty".into()));
                }
                if steps.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(Error::InvalidInput("pi table steps must be strictly increasing".into()));
                }
                for (_, v) in steps {
                    check_pi(*v)?;
                }
            }
        }
        Ok(())
    }

    /// Constant-λ schedule with constant π, if that is what this is.
    pub fn constant_parts(&self) -> Option<(f64, f64)> {
        match (&self.lambda, &self.pi) {
            (LambdaSchedule::Constant { epsilon }, PiSchedule::Constant { value }) => Some((*epsilon, *value)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub raw: f64,
    pub clamped: f64,
}

/// `Ξ_t = t / (t + λ(t))^π(t)` and its clamp to `[0, 1]`.
pub fn threshold(t: u64, schedule: &ExplorationSchedule) -> Threshold {
    let tf = t.max(1) as f64;
    let raw = tf / (tf + schedule.lambda.at(t)).powf(schedule.pi.at(t));
    Threshold { raw, clamped: raw.clamp(0.0, 1.0) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    ColdStart,
    Explore,
    Exploit,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::ColdStart => "cold-start",
            Branch::Explore => "explore",
            Branch::Exploit => "exploit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub arm: usize,
    pub branch: Branch,
    /// Step index this decision was made at (1-based).
    pub t: u64,
    pub xi: Threshold,
    pub zeta: f64,
}

/// Counters and generator owned by the training loop.
#[derive(Debug, Clone)]
pub struct PolicyState {
    t: u64,
    pulls: Vec<u64>,
    uniform_pulls: Vec<u64>,
    rng: Pcg64,
    seed: u64,
    pub cumulative_regret: f64,
}

impl PolicyState {
    pub fn new(n_arms: usize, seed: u64) -> Result<Self> {
        if n_arms == 0 {
            return Err(Error::InvalidInput("policy needs at least one arm".into()));
        }
        Ok(Self {
            t: 0,
            pulls: vec![0; n_arms],
            uniform_pulls: vec![0; n_arms],
            rng: Pcg64::seed_from_u64(seed),
            seed,
            cumulative_regret: 0.0,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.pulls.len()
    }

    /// Steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn uniform_pulls(&self) -> &[u64] {
        &self.uniform_pulls
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Draws the step's `ζ ∈ (0, 1)`.
    pub fn draw_zeta(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    pub fn in_cold_start(&self) -> bool {
        (self.t as usize) < self.pulls.len()
    }

    /// Draws `ζ` and selects.
    pub fn step(&mut self, schedule: &ExplorationSchedule, rewards: &[f64]) -> Result<Decision> {
        let zeta = self.draw_zeta();
        select_arm(self, schedule, rewards, zeta)
    }
}

/// Index of the largest reward; ties go to the lowest index.
pub fn argmax(rewards: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &r) in rewards.iter().enumerate() {
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

/// One policy step given an already-drawn `ζ`.
///
/// `rewards` is only read on the exploit branch.
pub fn select_arm(state: &mut PolicyState, schedule: &ExplorationSchedule, rewards: &[f64], zeta: f64) -> Result<Decision> {
    let k = state.pulls.len();
    if k == 0 {
        return Err(Error::InvalidInput("no arms to select from".into()));
    }
    let t = state.t + 1;
    let xi = threshold(t, schedule);
    let (arm, branch) = if state.in_cold_start() {
        (state.t as usize, Branch::ColdStart)
    } else if zeta > xi.clamped {
        if rewards.len() != k {
            return Err(Error::DimensionMismatch { context: "arm rewards", expected: k, got: rewards.len() });
        }
        (argmax(rewards).expect("k ≥ 1"), Branch::Exploit)
    } else {
        (state.rng.gen_range(0..k), Branch::Explore)
    };
    state.t = t;
    state.pulls[arm] += 1;
    if branch == Branch::Explore {
        state.uniform_pulls[arm] += 1;
    }
    Ok(Decision { arm, branch, t, xi, zeta })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretTracker {
    pub gaps: Vec<f64>,
    pub floor: f64,
    pub sum: f64,
}

impl RegretTracker {
    pub fn new(floor: f64) -> Self {
        Self { gaps: Vec::new(), floor, sum: 0.0 }
    }

    /// Appends `max(0, best − chosen)`.
    pub fn record(&mut self, chosen_value: f64, best_value: f64) -> f64 {
        let gap = (best_value - chosen_value).max(0.0);
        self.gaps.push(gap);
        self.sum += gap;
        gap
    }
}

pub fn record_regret(mut tracker: RegretTracker, chosen_value: f64, best_value: f64) -> RegretTracker {
    tracker.record(chosen_value, best_value);
    tracker
}
