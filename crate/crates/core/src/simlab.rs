//! Empirical checks of the policy's regret and exploration guarantees.
//!
//! Three harnesses: regret curves on Gaussian synthetic arms, the
//! uniform-branch pull-count lower bound, and numerical quadrature of the
//! two integral lower bounds behind it.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{threshold, Branch, ExplorationSchedule, PolicyState};
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, ols};

const NOISE: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticArm {
    pub mean: f64,
    pub noise_sd: f64,
}

impl SyntheticArm {
    pub fn new(mean: f64, noise_sd: f64) -> Result<Self> {
        if !(noise_sd >= 0.0 && noise_sd.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidInput(format!("synthetic arm needs finite mean and σ ≥ 0, got ({mean}, {noise_sd})")));
        }
        Ok(Self { mean, noise_sd })
    }
}

/// Arms with means `best − gap`.
pub fn arms_from_gaps(best: f64, gaps: &[f64], noise_sd: f64) -> Result<Vec<SyntheticArm>> {
    gaps.iter().map(|g| SyntheticArm::new(best - g, noise_sd)).collect()
}

/// Arm 0 optimal, the rest spread evenly over `[floor, 2·floor]`.
pub fn spread_gaps(k: usize, floor: f64) -> Vec<f64> {
    (0..k)
        .map(|a| match a {
            0 => 0.0,
            _ if k == 2 => floor,
            _ => floor * (1.0 + (a - 1) as f64 / (k - 2) as f64),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimFeedback {
    /// Only the pulled arm's reward is observed.
    #[default]
    Bandit,
    /// Every arm's reward is observed every step.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub horizon: usize,
    pub runs: usize,
    pub schedule: ExplorationSchedule,
    /// Mean instantaneous regret at steps `1..=horizon`.
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl RegretCurve {
    /// Least-squares slope of `log mean` on `log t` over `t ∈ [from, to]`,
    /// skipping steps whose mean regret is exactly zero.
    pub fn log_log_slope(&self, from: usize, to: usize) -> Option<f64> {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for t in from.max(1)..=to.min(self.horizon) {
            let v = self.mean[t - 1];
            if v > 0.0 {
                x.push((t as f64).ln());
                y.push(v.ln());
            }
        }
        (x.len() >= 2).then(|| ols(&x, &y).0)
    }

    pub fn at(&self, t: usize) -> f64 {
        self.mean[t - 1]
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,mean_regret,stderr")?;
        for (i, (m, s)) in self.mean.iter().zip(&self.stderr).enumerate() {
            writeln!(out, "{},{},{}", i + 1, m, s)?;
        }
        Ok(())
    }
}

fn check_gaps(arms: &[SyntheticArm], floor: f64) -> Result<Vec<f64>> {
    if arms.is_empty() {
        return Err(Error::InvalidInput("simulation needs at least one arm".into()));
    }
    if !(floor >= 0.0 && floor.is_finite()) {
        return Err(Error::InvalidInput(format!("gap floor must be finite and ≥ 0, got {floor}")));
    }
    let best = arms.iter().map(|a| a.mean).fold(f64::NEG_INFINITY, f64::max);
    let gaps: Vec<f64> = arms.iter().map(|a| best - a.mean).collect();
    let optimal = gaps.iter().filter(|&&g| g == 0.0).count();
    if optimal != 1 && optimal != arms.len() {
        return Err(Error::InvalidInput(format!("expected exactly one optimal arm, found {optimal}")));
    }
    // means are usually built as `best − gap`, which can round just below the floor
    let slack = 1e-12 * best.abs().max(1.0);
    if let Some(g) = gaps.iter().find(|&&g| g > 0.0 && g < floor - slack) {
        return Err(Error::InvalidInput(format!("suboptimal gap {g} below floor {floor}")));
    }
    if floor == 0.0 && optimal != arms.len() && arms.iter().any(|a| a.noise_sd > 0.0) {
        return Err(Error::InvalidInput("gap floor 0 with noisy arms: suboptimal arms are not separated".into()));
    }
    Ok(gaps)
}

struct RunTrace {
    regret: Vec<f64>,
    branches: Vec<Branch>,
}

fn run_once(
    arms: &[SyntheticArm],
    gaps: &[f64],
    schedule: &ExplorationSchedule,
    horizon: usize,
    seed: u64,
    feedback: SimFeedback,
) -> Result<RunTrace> {
    let k = arms.len();
    let mut policy = PolicyState::new(k, seed)?;
    let mut noise = Pcg64::seed_from_u64(derive_seed(seed, NOISE, 0));
    let dists = arms
        .iter()
        .map(|a| Normal::new(a.mean, a.noise_sd).map_err(|e| Error::InvalidInput(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut sums = vec![0.0; k];
    let mut counts = vec![0u64; k];
    let mut estimates = vec![0.0; k];
    let mut regret = Vec::with_capacity(horizon);
    let mut branches = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let d = policy.step(schedule, &estimates)?;
        regret.push(gaps[d.arm]);
        branches.push(d.branch);
        let observe: Vec<usize> = match feedback {
            SimFeedback::Bandit => vec![d.arm],
            SimFeedback::Full => (0..k).collect(),
        };
        for a in observe {
            sums[a] += dists[a].sample(&mut noise);
            counts[a] += 1;
            estimates[a] = sums[a] / counts[a] as f64;
        }
    }
    Ok(RunTrace { regret, branches })
}

/// Instantaneous regret averaged over `runs` independent runs; run `r` is
/// seeded with `seed + r`.
pub fn simulate_regret(
    arms: &[SyntheticArm],
    floor: f64,
    schedule: &ExplorationSchedule,
    horizon: usize,
    runs: usize,
    seed: u64,
    feedback: SimFeedback,
) -> Result<RegretCurve> {
    Ok(simulate_traces(arms, floor, schedule, horizon, runs, seed, feedback)?.0)
}

fn simulate_traces(
    arms: &[SyntheticArm],
    floor: f64,
    schedule: &ExplorationSchedule,
    horizon: usize,
    runs: usize,
    seed: u64,
    feedback: SimFeedback,
) -> Result<(RegretCurve, Vec<Vec<Branch>>)> {
    schedule.validate()?;
    if horizon == 0 || runs == 0 {
        return Err(Error::InvalidInput("horizon and runs must be at least 1".into()));
    }
    let gaps = check_gaps(arms, floor)?;
    let traces = (0..runs)
        .into_par_iter()
        .map(|r| run_once(arms, &gaps, schedule, horizon, seed.wrapping_add(r as u64), feedback))
        .collect::<Result<Vec<_>>>()?;
    let n = runs as f64;
    let mut mean = vec![0.0; horizon];
    for tr in &traces {
        for (m, v) in mean.iter_mut().zip(&tr.regret) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; horizon];
    for tr in &traces {
        for ((s, v), m) in var.iter_mut().zip(&tr.regret).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let stderr = var
        .iter()
        .map(|s| if runs > 1 { (s / (n - 1.0)).sqrt() / n.sqrt() } else { 0.0 })
        .collect();
    let curve = RegretCurve { horizon, runs, schedule: schedule.clone(), mean, stderr };
    Ok((curve, traces.into_iter().map(|t| t.branches).collect()))
}

/// `(t − 2)(1 + (1 − π)ε) / (2K(2 − π))`, the per-arm pull-count bound.
pub fn uniform_pull_bound(k: usize, epsilon: f64, pi: f64, t: u64) -> f64 {
    (t as f64 - 2.0) * (1.0 + (1.0 - pi) * epsilon) / (2.0 * k as f64 * (2.0 - pi))
}

/// `1 − K·exp(−3(t − 2)(1 + (1 − π)ε) / (28K(2 − π)))`.
pub fn uniform_pull_probability(k: usize, epsilon: f64, pi: f64, t: u64) -> f64 {
    let k = k as f64;
    1.0 - k * (-3.0 * (t as f64 - 2.0) * (1.0 + (1.0 - pi) * epsilon) / (28.0 * k * (2.0 - pi))).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingCheckpoint {
    pub t: u64,
    /// Per-arm lower bound on uniform-branch pulls in steps `1..t`.
    pub bound: f64,
    /// Theoretical probability that every arm meets the bound.
    pub probability_floor: f64,
    /// Fraction of runs in which every arm met the bound.
    pub satisfaction_rate: f64,
    /// Mean uniform-branch pulls per arm, averaged over arms and runs.
    pub mean_uniform_pulls: f64,
    pub stderr_uniform_pulls: f64,
    /// `(1/K)·Σ Ξ_r` over post-cold-start steps `r < t`, clamped.
    pub expected_uniform_pulls: f64,
    /// The same sum with the raw threshold.
    pub expected_uniform_pulls_raw: f64,
    /// Some raw threshold before `t` exceeded 1.
    pub clamp_active: bool,
    /// Empirical mean within 3 standard errors of the clamped expectation.
    pub expectation_matches: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingReport {
    pub k: usize,
    pub epsilon: f64,
    pub pi: f64,
    pub runs: usize,
    pub seed: u64,
    pub checkpoints: Vec<CountingCheckpoint>,
    pub pass: bool,
}

/// Uniform-branch pull counts `τ^R_a(t)` at each checkpoint, per run.
fn uniform_counts(k: usize, schedule: &ExplorationSchedule, checkpoints: &[u64], runs: usize, seed: u64) -> Result<Vec<Vec<Vec<u64>>>> {
    let last = checkpoints.iter().copied().max().unwrap_or(1);
    (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut policy = PolicyState::new(k, seed.wrapping_add(r as u64))?;
            let rewards = vec![0.0; k];
            let mut out = Vec::with_capacity(checkpoints.len());
            let mut cp = checkpoints.iter().peekable();
            // τ^R(t) counts steps 1..t−1, i.e. the state after t−1 steps.
            for done in 0..last {
                while let Some(&&t) = cp.peek() {
                    if t - 1 != done {
                        break;
                    }
                    out.push(policy.uniform_pulls().to_vec());
                    cp.next();
                }
                policy.step(schedule, &rewards)?;
            }
            for _ in cp {
                out.push(policy.uniform_pulls().to_vec());
            }
            Ok(out)
        })
        .collect()
}

/// Monte-Carlo check of the uniform-branch pull-count bound.
///
/// The bound is stated for constant `λ = ε` and `ε, π ∈ (0, 1)`; other
/// schedules are rejected.
pub fn check_counting_lemma(k: usize, schedule: &ExplorationSchedule, checkpoints: &[u64], runs: usize, seed: u64) -> Result<CountingReport> {
    schedule.validate()?;
    let (epsilon, pi) = schedule
        .constant_parts()
        .ok_or_else(|| Error::InvalidInput("pull-count bound needs constant λ and π".into()))?;
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidInput(format!("pull-count bound needs π ∈ (0, 1), got {pi}")));
    }
    uniform_pull_report(k, schedule, epsilon, pi, checkpoints, runs, seed)
}

/// Expectation identity for any constant schedule, including `π > 1`.
pub fn uniform_pull_report(
    k: usize,
    schedule: &ExplorationSchedule,
    epsilon: f64,
    pi: f64,
    checkpoints: &[u64],
    runs: usize,
    seed: u64,
) -> Result<CountingReport> {
    if k == 0 || runs == 0 {
        return Err(Error::InvalidInput("pull-count check needs K ≥ 1 and runs ≥ 1".into()));
    }
    let mut cps = checkpoints.to_vec();
    cps.sort_unstable();
    cps.dedup();
    if cps.first().is_none_or(|&t| t < 3) {
        return Err(Error::InvalidInput("checkpoints must be non-empty and ≥ 3".into()));
    }
    let counts = uniform_counts(k, schedule, &cps, runs, seed)?;
    let mut out = Vec::with_capacity(cps.len());
    for (c, &t) in cps.iter().enumerate() {
        let bound = uniform_pull_bound(k, epsilon, pi, t);
        let satisfied = counts.iter().filter(|run| run[c].iter().all(|&v| v as f64 >= bound)).count();
        let all: Vec<f64> = counts.iter().flat_map(|run| run[c].iter().map(|&v| v as f64)).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        // Per-run arm-averaged counts are independent across runs.
        let per_run: Vec<f64> = counts.iter().map(|run| run[c].iter().sum::<u64>() as f64 / k as f64).collect();
        let r = per_run.len() as f64;
        let sd = if per_run.len() > 1 {
            (per_run.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0)).sqrt()
        } else {
            0.0
        };
        let stderr = sd / r.sqrt();
        let (mut expected, mut expected_raw, mut clamp_active) = (0.0, 0.0, false);
        for step in (k as u64 + 1)..t {
            let xi = threshold(step, schedule);
            expected += xi.clamped / k as f64;
            expected_raw += xi.raw / k as f64;
            clamp_active |= xi.raw > 1.0;
        }
        let floor = uniform_pull_probability(k, epsilon, pi, t);
        let rate = satisfied as f64 / runs as f64;
        out.push(CountingCheckpoint {
            t,
            bound,
            probability_floor: floor,
            satisfaction_rate: rate,
            mean_uniform_pulls: mean,
            stderr_uniform_pulls: stderr,
            expected_uniform_pulls: expected,
            expected_uniform_pulls_raw: expected_raw,
            clamp_active,
            expectation_matches: (mean - expected).abs() <= (3.0 * stderr).max(1e-9 * expected.abs().max(1.0)),
            pass: rate >= floor,
        });
    }
    let pass = out.iter().all(|c| c.pass);
    Ok(CountingReport { k, epsilon, pi, runs, seed, checkpoints: out, pass })
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Option<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        // Below the rounding floor of the running value no further split helps.
        if delta.abs() <= 15.0 * tol || delta.abs() <= 64.0 * f64::EPSILON * (left + right).abs() {
            return Some(left + right + delta / 15.0);
        }
        if depth == 0 {
            return None;
        }
        Some(
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
                + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?,
        )
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    if ![fa, fb, fm].iter().all(|v| v.is_finite()) {
        return Err(Error::Quadrature { a, b });
    }
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 48)
        .filter(|v| v.is_finite())
        .ok_or(Error::Quadrature { a, b })
}

pub const QUADRATURE_TOL: f64 = 1e-9;
pub const SLACK_TOL: f64 = 1e-6;

/// `∫₁^{t−1} x/(x+ε)^π dx` and its lower bound `(t−2)(1+(1−π)ε)/(2−π)`.
pub fn constant_lambda_integral(epsilon: f64, pi: f64, t: f64) -> Result<(f64, f64)> {
    check_integral_args(pi, t)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!("ε must lie in (0, 1), got {epsilon}")));
    }
    let lhs = adaptive_simpson(&|x: f64| x / (x + epsilon).powf(pi), 1.0, t - 1.0, QUADRATURE_TOL)?;
    Ok((lhs, (t - 2.0) * (1.0 + (1.0 - pi) * epsilon) / (2.0 - pi)))
}

/// `ln(2eʸ − 1)` without overflow.
fn ln_two_exp_minus_one(y: f64) -> f64 {
    y + (2.0 - (-y).exp()).ln()
}

/// `∫₁^{t−1} x/(x+1−e^{−𝔦x})^π dx` and its lower bound
/// `((1/(2𝔦))[ln(2e^{𝔦(t−1)}−1) − ln(2e^{𝔦}−1)])^π`.
pub fn growing_lambda_integral(rate: f64, pi: f64, t: f64) -> Result<(f64, f64)> {
    check_integral_args(pi, t)?;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidInput(format!("growth rate must be positive, got {rate}")));
    }
    let lhs = adaptive_simpson(&|x: f64| x / (x - (-rate * x).exp_m1()).powf(pi), 1.0, t - 1.0, QUADRATURE_TOL)?;
    let inner = (ln_two_exp_minus_one(rate * (t - 1.0)) - ln_two_exp_minus_one(rate)) / (2.0 * rate);
    Ok((lhs, inner.powf(pi)))
}

fn check_integral_args(pi: f64, t: f64) -> Result<()> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidInput(format!("π must lie in (0, 1), got {pi}")));
    }
    if !(t >= 3.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("t must be ≥ 3, got {t}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaCase {
    Constant,
    Growing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralPoint {
    pub case: LambdaCase,
    /// `ε` for the constant case, `𝔦` for the growing one.
    pub param: f64,
    pub pi: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralGrid {
    pub epsilons: Vec<f64>,
    pub rates: Vec<f64>,
    pub pis: Vec<f64>,
    pub ts: Vec<f64>,
}

impl Default for IntegralGrid {
    fn default() -> Self {
        let tenths: Vec<f64> = (0..10).map(|i| 0.05 + 0.1 * i as f64).collect();
        Self {
            epsilons: tenths.clone(),
            rates: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
            pis: tenths,
            ts: vec![3.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 2000.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralReport {
    pub points: usize,
    pub min_slack_constant: f64,
    pub min_slack_growing: f64,
    pub violations: Vec<IntegralPoint>,
    pub all_hold: bool,
}

/// Evaluates both integral bounds over the whole grid.
pub fn check_integral_bounds(grid: &IntegralGrid) -> Result<IntegralReport> {
    let mut jobs = Vec::new();
    for &pi in &grid.pis {
        for &t in &grid.ts {
            jobs.extend(grid.epsilons.iter().map(|&e| (LambdaCase::Constant, e, pi, t)));
            jobs.extend(grid.rates.iter().map(|&r| (LambdaCase::Growing, r, pi, t)));
        }
    }
    let points = jobs
        .par_iter()
        .map(|&(case, param, pi, t)| {
            let (lhs, rhs) = match case {
                LambdaCase::Constant => constant_lambda_integral(param, pi, t)?,
                LambdaCase::Growing => growing_lambda_integral(param, pi, t)?,
            };
            let slack = lhs - rhs;
            Ok(IntegralPoint { case, param, pi, t, lhs, rhs, slack, holds: slack >= -SLACK_TOL })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_slack = |c: LambdaCase| {
        points.iter().filter(|p| p.case == c).map(|p| p.slack).fold(f64::INFINITY, f64::min)
    };
    let violations: Vec<IntegralPoint> = points.iter().filter(|p| !p.holds).cloned().collect();
    Ok(IntegralReport {
        points: points.len(),
        min_slack_constant: min_slack(LambdaCase::Constant),
        min_slack_growing: min_slack(LambdaCase::Growing),
        all_hold: violations.is_empty(),
        violations,
    })
}
