//! Wall-clock cost of subset selection versus per-sample gradients.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use serde::Serialize;

use crate::data::{Batch, BatchKind, FeatureSet};
use crate::error::{Error, Result};
use crate::kernel::{build_kernel, KernelMetric};
use crate::submod::{lazy_greedy, naive_greedy, ObjectiveKind, ObjectiveParams, Selection, SubmodularObjective};
use crate::trainer::{Arch, ModelParams};

pub const MAX_BENCH_SIZE: usize = 8192;
/// Naive greedy is only timed up to this ground-set size.
pub const NAIVE_TIMING_LIMIT: usize = 2048;
const REPEATS: usize = 5;
const BENCH_DIM: usize = 16;
const QUERY_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub kind: ObjectiveKind,
    pub n: usize,
    pub beta: usize,
    pub kernel_ms: f64,
    pub lazy_ms: f64,
    /// Empty above [`NAIVE_TIMING_LIMIT`].
    pub naive_ms: Option<f64>,
    pub lazy_evals: usize,
    pub naive_evals: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Median over [`REPEATS`] calls, plus the last result.
fn timed<T>(mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut times = Vec::with_capacity(REPEATS);
    let mut last = None;
    for _ in 0..REPEATS {
        let start = Instant::now();
        let out = f()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        last = Some(out);
    }
    Ok((median(times), last.expect("REPEATS ≥ 1")))
}

fn random_features(n: usize, d: usize, seed: u64) -> Result<FeatureSet> {
    let mut rng = Pcg64::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let ids = (0..n).map(|i| format!("b{i}")).collect();
    FeatureSet::new(x, d, vec![0; n], ids, Some(1))
}

/// `β = round(budget_frac · n)`, at least 1.
pub fn bench_budget(n: usize, budget_frac: f64) -> usize {
    ((budget_frac * n as f64).round() as usize).clamp(1, n)
}

/// Greedy timings on a cosine kernel over Gaussian features.
///
/// Kinds that need a query set get [`QUERY_SIZE`] extra points as the query.
pub fn bench_greedy(sizes: &[usize], budget_frac: f64, kinds: &[ObjectiveKind], seed: u64) -> Result<Vec<BenchRow>> {
    if !(budget_frac > 0.0 && budget_frac <= 1.0) {
        return Err(Error::InvalidInput(format!("budget must lie in (0, 1], got {budget_frac}")));
    }
    if kinds.is_empty() || sizes.is_empty() {
        return Err(Error::InvalidInput("bench needs at least one size and one kind".into()));
    }
    if let Some(&bad) = sizes.iter().find(|&&n| n == 0 || n > MAX_BENCH_SIZE) {
        return Err(Error::InvalidInput(format!("bench size {bad} outside [1, {MAX_BENCH_SIZE}]")));
    }
    let mut rows = Vec::new();
    for &n in sizes {
        let beta = bench_budget(n, budget_frac);
        for &kind in kinds {
            let extra = if kind.needs_query() { QUERY_SIZE } else { 0 };
            let fs = random_features(n + extra, BENCH_DIM, seed ^ n as u64)?;
            let batch = Batch::full(&fs, BatchKind::Train);
            let (kernel_ms, kernel) = timed(|| build_kernel(&fs, &batch, KernelMetric::CosineShifted, 1.0))?;
            let query = kind.needs_query().then(|| (n..n + extra).collect());
            let obj = SubmodularObjective::new(kind, Arc::new(kernel), ObjectiveParams::default(), query)?;
            let (lazy_ms, lazy) = timed(|| lazy_greedy(&obj, beta))?;
            let (naive_ms, naive_evals) = if n <= NAIVE_TIMING_LIMIT {
                let (ms, sel): (f64, Selection) = timed(|| naive_greedy(&obj, beta))?;
                (Some(ms), sel.evaluations)
            } else {
                (None, naive_eval_count(n, beta))
            };
            rows.push(BenchRow { kind, n, beta, kernel_ms, lazy_ms, naive_ms, lazy_evals: lazy.evaluations, naive_evals });
        }
    }
    Ok(rows)
}

/// Gains evaluated by naive greedy: `Σ_{i<β} (n − i)`.
pub fn naive_eval_count(n: usize, beta: usize) -> usize {
    (0..beta.min(n)).map(|i| n - i).sum()
}

pub fn write_bench_csv<W: std::io::Write>(rows: &[BenchRow], mut out: W) -> Result<()> {
    writeln!(out, "kind,n,beta,kernel_ms,lazy_ms,naive_ms,lazy_evals,naive_evals")?;
    for r in rows {
        let naive = r.naive_ms.map(|v| format!("{v:.4}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{:.4},{:.4},{},{},{}",
            r.kind, r.n, r.beta, r.kernel_ms, r.lazy_ms, naive, r.lazy_evals, r.naive_evals
        )?;
    }
    Ok(())
}

/// Median single-threaded time to compute `n` per-sample gradients of a
/// one-hidden-layer MLP on `d_feat`-dimensional inputs.
pub fn gradient_time_ms(n: usize, d_feat: usize, hidden: usize, n_classes: usize, seed: u64) -> Result<f64> {
    let fs = random_features(n, d_feat, seed)?;
    let model = ModelParams::init(Arch::Mlp1h { hidden }, d_feat, n_classes, seed)?;
    let mut buf = vec![0.0; model.dim()];
    let (ms, _) = timed(|| {
        let mut acc = 0.0;
        for i in 0..n {
            acc += model.sample_grad(fs.row(i), i % n_classes, &mut buf)?;
        }
        Ok(acc)
    })?;
    Ok(ms)
}
