//! Small supervised learner driven by bandit-chosen submodular subsets.
//!
//! Two models with closed-form per-sample cross-entropy gradients:
//! linear softmax (`W x + b`) and a one-hidden-layer tanh MLP. Parameters
//! are a flat vector; the layouts are
//!
//! ```text
//! linear-softmax  W[C × F] | b[C]
//! mlp-1h          W1[H × F] | b1[H] | W2[C × H] | b2[C]
//! ```
//!
//! all row-major.

use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{Branch, ExplorationSchedule, PolicyState};
use crate::data::{Batch, FeatureSet};
use crate::error::{Error, Result};
use crate::kernel::{gradient_kernel, SimilarityMatrix};
use crate::numeric::{derive_seed, fsum};
use crate::reward::{arm_reward, fim_update, GradientMatrix, HessianApprox, HessianKind, RewardEstimate};
use crate::submod::{lazy_greedy, ObjectiveKind, ObjectiveParams, Selection, SubmodularObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Arch {
    #[default]
    LinearSoftmax,
    Mlp1h { hidden: usize },
}

impl Arch {
    pub fn param_count(self, d_feat: usize, n_classes: usize) -> usize {
        match self {
            Arch::LinearSoftmax => n_classes * (d_feat + 1),
            Arch::Mlp1h { hidden } => hidden * (d_feat + 1) + n_classes * (hidden + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    weights: Vec<f64>,
    arch: Arch,
    n_classes: usize,
    d_feat: usize,
}

impl ModelParams {
    pub fn new(weights: Vec<f64>, arch: Arch, n_classes: usize, d_feat: usize) -> Result<Self> {
        if n_classes < 2 || d_feat == 0 {
            return Err(Error::InvalidInput(format!(
                "model needs ≥ 2 classes and ≥ 1 feature, got {n_classes} and {d_feat}"
            )));
        }
        if let Arch::Mlp1h { hidden: 0 } = arch {
            return Err(Error::InvalidInput("hidden width must be at least 1".into()));
        }
        let expected = arch.param_count(d_feat, n_classes);
        if weights.len() != expected {
            return Err(Error::DimensionMismatch { context: "model weights", expected, got: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(Self { weights, arch, n_classes, d_feat })
    }

    /// Linear models start at zero; the MLP draws `N(0, 1/fan_in)` weights
    /// and zero biases.
    pub fn init(arch: Arch, d_feat: usize, n_classes: usize, seed: u64) -> Result<Self> {
        let d = arch.param_count(d_feat, n_classes);
        let weights = match arch {
            Arch::LinearSoftmax => vec![0.0; d],
            Arch::Mlp1h { hidden } => {
                let mut rng = Pcg64::seed_from_u64(seed);
                let mut w = Vec::with_capacity(d);
                let mut block = |rows: usize, fan_in: usize, w: &mut Vec<f64>| {
                    let scale = 1.0 / (fan_in as f64).sqrt();
                    for _ in 0..rows * fan_in {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        w.push(scale * z);
                    }
                    w.extend(std::iter::repeat_n(0.0, rows));
                };
                block(hidden, d_feat, &mut w);
                block(n_classes, hidden, &mut w);
                w
            }
        };
        Self::new(weights, arch, n_classes, d_feat)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Logits for one sample; `hidden` receives the tanh activations for the
    /// MLP and is left empty for the linear model.
    fn forward(&self, x: &[f64], hidden: &mut Vec<f64>) -> Result<Vec<f64>> {
        let (f, c) = (self.d_feat, self.n_classes);
        let w = &self.weights;
        hidden.clear();
        let logits: Vec<f64> = match self.arch {
            Arch::LinearSoftmax => {
                let b = &w[c * f..];
                (0..c).map(|k| affine(&w[k * f..(k + 1) * f], x, b[k])).collect()
            }
            Arch::Mlp1h { hidden: h } => {
                let (w1, rest) = w.split_at(h * f);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                hidden.extend((0..h).map(|j| affine(&w1[j * f..(j + 1) * f], x, b1[j]).tanh()));
                (0..c).map(|k| affine(&w2[k * h..(k + 1) * h], hidden, b2[k])).collect()
            }
        };
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(logits)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x, &mut Vec::new())
    }

    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        let z = self.logits(x)?;
        Ok(log_sum_exp(&z) - z[label])
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let z = self.logits(x)?;
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        Ok(best)
    }

    /// Writes `∇θ ℓ(x, label)` into `out` and returns the loss.
    pub fn sample_grad(&self, x: &[f64], label: usize, out: &mut [f64]) -> Result<f64> {
        if x.len() != self.d_feat {
            return Err(Error::DimensionMismatch { context: "sample features", expected: self.d_feat, got: x.len() });
        }
        if label >= self.n_classes {
            return Err(Error::IndexOutOfBounds { index: label, size: self.n_classes });
        }
        let (f, c) = (self.d_feat, self.n_classes);
        let mut hidden = Vec::new();
        let z = self.forward(x, &mut hidden)?;
        let lse = log_sum_exp(&z);
        // dℓ/dz = softmax(z) − e_label
        let delta: Vec<f64> = z.iter().enumerate().map(|(k, zk)| (zk - lse).exp() - f64::from(k == label)).collect();
        match self.arch {
            Arch::LinearSoftmax => {
                let (gw, gb) = out.split_at_mut(c * f);
                for k in 0..c {
                    outer_row(&mut gw[k * f..(k + 1) * f], delta[k], x);
                }
                gb.copy_from_slice(&delta);
            }
            Arch::Mlp1h { hidden: h } => {
                let w2 = &self.weights[h * (f + 1)..h * (f + 1) + c * h];
                let (g1, rest) = out.split_at_mut(h * f);
                let (gb1, rest) = rest.split_at_mut(h);
                let (g2, gb2) = rest.split_at_mut(c * h);
                for k in 0..c {
                    outer_row(&mut g2[k * h..(k + 1) * h], delta[k], &hidden);
                }
                gb2.copy_from_slice(&delta);
                for j in 0..h {
                    let back: f64 = (0..c).map(|k| w2[k * h + j] * delta[k]).sum();
                    let dh = back * (1.0 - hidden[j] * hidden[j]);
                    outer_row(&mut g1[j * f..(j + 1) * f], dh, x);
                    gb1[j] = dh;
                }
            }
        }
        Ok(lse - z[label])
    }

    fn with_weights(&self, weights: Vec<f64>) -> Self {
        Self { weights, ..self.clone() }
    }
}

#[inline]
fn affine(w: &[f64], x: &[f64], b: f64) -> f64 {
    w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b
}

#[inline]
fn outer_row(out: &mut [f64], scale: f64, v: &[f64]) {
    for (o, x) in out.iter_mut().zip(v) {
        *o = scale * x;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Per-sample gradients over `batch`, one column per sample in batch order.
pub fn per_sample_grads(model: &ModelParams, batch: &Batch, features: &FeatureSet) -> Result<GradientMatrix> {
    Ok(grads_with_losses(model, batch.indices(), features)?.0)
}

/// Gradients and losses for the listed rows.
pub fn grads_with_losses(model: &ModelParams, rows: &[usize], features: &FeatureSet) -> Result<(GradientMatrix, Vec<f64>)> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("gradient batch is empty".into()));
    }
    if features.d_feat() != model.d_feat() {
        return Err(Error::DimensionMismatch {
            context: "feature dimension",
            expected: model.d_feat(),
            got: features.d_feat(),
        });
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= features.len()) {
        return Err(Error::IndexOutOfBounds { index: bad, size: features.len() });
    }
    let d = model.dim();
    let mut data = vec![0.0; d * rows.len()];
    let losses = data
        .par_chunks_mut(d)
        .zip(rows.par_iter())
        .map(|(col, &i)| model.sample_grad(features.row(i), features.label(i), col))
        .collect::<Result<Vec<f64>>>()?;
    Ok((GradientMatrix::new(data, d, rows.len())?, losses))
}

/// `θ − lr · mean(selected columns)`, summing columns in ascending index
/// order.
pub fn sgd_step(model: &ModelParams, grads: &GradientMatrix, cols: &[usize], lr: f64) -> Result<ModelParams> {
    if cols.is_empty() {
        return Err(Error::InvalidInput("sgd step needs a non-empty subset".into()));
    }
    if grads.d() != model.dim() {
        return Err(Error::DimensionMismatch { context: "sgd gradients", expected: model.dim(), got: grads.d() });
    }
    let mut order = cols.to_vec();
    order.sort_unstable();
    if let Some(&bad) = order.iter().find(|&&c| c >= grads.m()) {
        return Err(Error::IndexOutOfBounds { index: bad, size: grads.m() });
    }
    let mut sum = vec![0.0; model.dim()];
    for &c in &order {
        for (s, g) in sum.iter_mut().zip(grads.column(c)) {
            *s += g;
        }
    }
    let n = order.len() as f64;
    let weights = model.weights.iter().zip(&sum).map(|(w, s)| w - lr * (s / n)).collect();
    Ok(model.with_weights(weights))
}

/// Mean loss and accuracy over every row of `features`.
pub fn evaluate(model: &ModelParams, features: &FeatureSet) -> Result<(f64, f64)> {
    let per_row = (0..features.len())
        .into_par_iter()
        .map(|i| {
            let z = model.logits(features.row(i))?;
            let y = features.label(i);
            let hit = z.iter().enumerate().all(|(k, &v)| if k < y { v < z[y] } else { v <= z[y] });
            Ok((log_sum_exp(&z) - z[y], hit))
        })
        .collect::<Result<Vec<(f64, bool)>>>()?;
    let n = features.len() as f64;
    let loss = fsum(per_row.iter().map(|r| r.0)) / n;
    let acc = per_row.iter().filter(|r| r.1).count() as f64 / n;
    Ok((loss, acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { value: f64 },
    /// Cosine decay from `base` to `min` over the whole run.
    Cosine { base: f64, min: f64 },
}

impl LrSchedule {
    /// Rate at 0-based step `s` of `total`.
    pub fn at(&self, s: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant { value } => value,
            LrSchedule::Cosine { base, min } => {
                let frac = if total <= 1 { 0.0 } else { s as f64 / (total - 1) as f64 };
                min + 0.5 * (base - min) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        let good = match *self {
            LrSchedule::Constant { value } => ok(value),
            LrSchedule::Cosine { base, min } => ok(base) && ok(min) && min <= base,
        };
        if good {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("learning-rate schedule out of range: {self:?}")))
        }
    }
}

/// Which arm rewards are refreshed each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feedback {
    /// Every arm is maximized and scored on every step.
    #[default]
    Full,
    /// Only the pulled arm is scored; exploit reads the latest known rewards.
    Bandit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    OnlineSubmod,
    /// Uniformly random subset of the same size.
    Random,
    /// The whole batch every step.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub arch: Arch,
    pub lr: LrSchedule,
    pub budget_frac: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub warm_start_epochs: usize,
    #[serde(default = "default_val_points")]
    pub val_points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub feedback: Feedback,
    #[serde(default = "default_hessian")]
    pub hessian: HessianKind,
    #[serde(default = "default_fim_momentum")]
    pub fim_momentum: f64,
    #[serde(default)]
    pub strategy: Strategy,
}

fn default_val_points() -> usize {
    2
}

fn default_hessian() -> HessianKind {
    HessianKind::Identity
}

fn default_fim_momentum() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn new(lr: f64, budget_frac: f64, batch_size: usize, epochs: usize, seed: u64) -> Self {
        Self {
            arch: Arch::LinearSoftmax,
            lr: LrSchedule::Constant { value: lr },
            budget_frac,
            batch_size,
            epochs,
            warm_start_epochs: 0,
            val_points: default_val_points(),
            seed,
            feedback: Feedback::Full,
            hessian: HessianKind::Identity,
            fim_momentum: default_fim_momentum(),
            strategy: Strategy::OnlineSubmod,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.budget_frac > 0.0 && self.budget_frac <= 1.0) {
            return bad(format!("budget_frac must lie in (0, 1], got {}", self.budget_frac));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.warm_start_epochs > self.epochs {
            return bad(format!(
                "warm_start_epochs ({}) exceeds epochs ({})",
                self.warm_start_epochs, self.epochs
            ));
        }
        if self.val_points == 0 {
            return bad("val_points must be at least 1".into());
        }
        if !(self.fim_momentum > 0.0 && self.fim_momentum <= 1.0) {
            return bad(format!("fim_momentum must lie in (0, 1], got {}", self.fim_momentum));
        }
        if let Arch::Mlp1h { hidden: 0 } = self.arch {
            return bad("hidden width must be at least 1".into());
        }
        self.lr.validate()
    }

    /// Selected subset size for a batch of `len` samples.
    pub fn subset_size(&self, len: usize) -> usize {
        ((self.budget_frac * len as f64).round() as usize).clamp(1, len.max(1))
    }
}

/// Full-batch warm-start epochs implied by spending a fraction `kappa` of
/// the run on subset training at `budget_frac`: `T_f = ⌊κ·T·budget_frac⌋`.
pub fn warm_start_epochs(kappa: f64, epochs: usize, budget_frac: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&kappa) || !(budget_frac > 0.0 && budget_frac <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "kappa must lie in [0, 1] and budget_frac in (0, 1], got {kappa} and {budget_frac}"
        )));
    }
    Ok((kappa * epochs as f64 * budget_frac).floor() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub params: ObjectiveParams,
}

impl ArmSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self { kind, params: ObjectiveParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepBranch {
    /// Full batch during warm start; no selection.
    Warm,
    Full,
    Random,
    ColdStart,
    Explore,
    Exploit,
}

impl From<Branch> for StepBranch {
    fn from(b: Branch) -> Self {
        match b {
            Branch::ColdStart => StepBranch::ColdStart,
            Branch::Explore => StepBranch::Explore,
            Branch::Exploit => StepBranch::Exploit,
        }
    }
}

/// One line of `steps.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: usize,
    pub arm: Option<usize>,
    pub branch: StepBranch,
    pub xi_raw: Option<f64>,
    pub xi: Option<f64>,
    /// Latest reward per arm; `null` where none has been computed.
    pub rewards: Vec<Option<f64>>,
    /// Dataset indices of the samples used for the update, ascending.
    pub subset: Vec<usize>,
    /// Mean loss over the whole batch before the update.
    pub train_loss: f64,
    /// Loss and accuracy over the full validation set after the update.
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub model: ModelParams,
}

// Stream tags for seed derivation.
const INIT: u64 = 1;
const SHUFFLE: u64 = 2;
const VALIDATION: u64 = 3;
const POLICY: u64 = 4;
const RANDOM: u64 = 5;

struct ArmOutcome {
    selection: Selection,
    reward: RewardEstimate,
}

/// Per-step data shared read-only by every arm.
struct StepData<'a> {
    grads: &'a GradientMatrix,
    val_grads: &'a GradientMatrix,
    plain_kernel: Option<Arc<SimilarityMatrix>>,
    /// Kernel over batch columns followed by validation columns.
    joint_kernel: Option<Arc<SimilarityMatrix>>,
    budget: usize,
    lr: f64,
}

impl StepData<'_> {
    fn run_arm(&self, arm: usize, spec: &ArmSpec, hessian: &HessianApprox) -> Result<ArmOutcome> {
        let obj = if spec.kind.needs_query() {
            let m = self.grads.m();
            let query = (m..m + self.val_grads.m()).collect();
            let kernel = self.joint_kernel.clone().expect("joint kernel built for query arms");
            SubmodularObjective::new(spec.kind, kernel, spec.params, Some(query))?
        } else {
            let kernel = self.plain_kernel.clone().expect("plain kernel built for plain arms");
            SubmodularObjective::new(spec.kind, kernel, spec.params, None)?
        };
        let selection = lazy_greedy(&obj, self.budget)?;
        let reward = arm_reward(arm, &selection, self.grads, self.val_grads, hessian, self.lr)?;
        Ok(ArmOutcome { selection, reward })
    }
}

fn columns(g: &GradientMatrix) -> Vec<&[f64]> {
    g.columns().collect()
}

/// The selection-and-update loop.
///
/// Every strategy shares the same initialization, batch order and
/// validation draws, so runs differ only in which samples update `θ`.
pub fn run_online_submod(
    train: &FeatureSet,
    val: &FeatureSet,
    config: &TrainConfig,
    schedule: &ExplorationSchedule,
    arms: &[ArmSpec],
) -> Result<TrainOutcome> {
    config.validate()?;
    schedule.validate()?;
    if arms.is_empty() {
        return Err(Error::InvalidInput("arms list is empty".into()));
    }
    for a in arms {
        a.params.validate()?;
    }
    if val.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".into()));
    }
    if train.d_feat() != val.d_feat() {
        return Err(Error::DimensionMismatch { context: "validation features", expected: train.d_feat(), got: val.d_feat() });
    }
    let n_classes = train.n_classes().max(val.n_classes()).max(2);
    let d = config.arch.param_count(train.d_feat(), n_classes);
    if config.hessian == HessianKind::FimEma && d > crate::reward::FIM_MAX_DIM {
        return Err(Error::InvalidInput(format!(
            "FIM surrogate needs d ≤ {}, model has d = {d}",
            crate::reward::FIM_MAX_DIM
        )));
    }

    let k = arms.len();
    let n = train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let seed = config.seed;

    let mut model = ModelParams::init(config.arch, train.d_feat(), n_classes, derive_seed(seed, INIT, 0))?;
    let mut policy = PolicyState::new(k, derive_seed(seed, POLICY, 0))?;
    let mut val_rng = Pcg64::seed_from_u64(derive_seed(seed, VALIDATION, 0));
    let mut random_rng = Pcg64::seed_from_u64(derive_seed(seed, RANDOM, 0));
    let mut hessian = match config.hessian {
        HessianKind::Identity => HessianApprox::Identity,
        HessianKind::FimEma => HessianApprox::fim(config.fim_momentum)?,
    };
    let need_plain = arms.iter().any(|a| !a.kind.needs_query());
    let need_joint = arms.iter().any(|a| a.kind.needs_query());
    let mut last_rewards: Vec<Option<f64>> = vec![None; k];
    let mut records = Vec::with_capacity(total);

    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut shuffle_rng = Pcg64::seed_from_u64(derive_seed(seed, SHUFFLE, epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let warm = epoch < config.warm_start_epochs;
        for rows in order.chunks(config.batch_size) {
            let lr = config.lr.at(step, total);
            step += 1;
            let mut val_rows = index::sample(&mut val_rng, val.len(), config.val_points.min(val.len())).into_vec();
            val_rows.sort_unstable();
            let (grads, losses) = grads_with_losses(&model, rows, train)?;
            let train_loss = fsum(losses.iter().copied()) / rows.len() as f64;
            let budget = config.subset_size(rows.len());

            let mut arm = None;
            let mut xi = None;
            let mut rewards = vec![None; k];
            let (branch, positions): (StepBranch, Vec<usize>) = if warm || config.strategy == Strategy::Full {
                (if warm { StepBranch::Warm } else { StepBranch::Full }, (0..rows.len()).collect())
            } else if config.strategy == Strategy::Random {
                let mut p = index::sample(&mut random_rng, rows.len(), budget).into_vec();
                p.sort_unstable();
                (StepBranch::Random, p)
            } else {
                let (val_grads, _) = grads_with_losses(&model, &val_rows, val)?;
                let data = StepData {
                    grads: &grads,
                    val_grads: &val_grads,
                    plain_kernel: if need_plain { Some(Arc::new(gradient_kernel(&columns(&grads))?)) } else { None },
                    joint_kernel: if need_joint {
                        let mut cols = columns(&grads);
                        cols.extend(val_grads.columns());
                        Some(Arc::new(gradient_kernel(&cols)?))
                    } else {
                        None
                    },
                    budget,
                    lr,
                };
                let outcomes = match config.feedback {
                    Feedback::Full => {
                        let all = arms
                            .par_iter()
                            .enumerate()
                            .map(|(a, spec)| data.run_arm(a, spec, &hessian))
                            .collect::<Result<Vec<_>>>()?;
                        for (slot, o) in last_rewards.iter_mut().zip(&all) {
                            *slot = Some(o.reward.value);
                        }
                        Some(all)
                    }
                    Feedback::Bandit => None,
                };
                let scores: Vec<f64> = last_rewards.iter().map(|r| r.unwrap_or(f64::NEG_INFINITY)).collect();
                let decision = policy.step(schedule, &scores)?;
                let chosen = match outcomes {
                    Some(mut all) => all.swap_remove(decision.arm),
                    None => {
                        let o = data.run_arm(decision.arm, &arms[decision.arm], &hessian)?;
                        last_rewards[decision.arm] = Some(o.reward.value);
                        o
                    }
                };
                if let HessianApprox::FimEma { .. } = hessian {
                    hessian = fim_update(&hessian, &val_grads)?;
                }
                arm = Some(decision.arm);
                xi = Some(decision.xi);
                rewards = last_rewards.clone();
                let mut p = chosen.selection.chosen;
                p.sort_unstable();
                (decision.branch.into(), p)
            };

            model = sgd_step(&model, &grads, &positions, lr)?;
            let (val_loss, val_acc) = evaluate(&model, val)?;
            let mut subset: Vec<usize> = positions.iter().map(|&p| rows[p]).collect();
            subset.sort_unstable();
            records.push(StepRecord {
                t: step,
                arm,
                branch,
                xi_raw: xi.map(|x| x.raw),
                xi: xi.map(|x| x.clamped),
                rewards,
                subset,
                train_loss,
                val_loss,
                val_acc,
            });
        }
    }
    Ok(TrainOutcome { records, model })
}
