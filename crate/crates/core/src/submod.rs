//! Submodular set functions over a similarity kernel, their incremental
//! marginal gains, and cardinality-constrained maximizers.
//!
//! An objective lives on the index space of its kernel. For the mutual
//! information kinds a subset of kernel indices is reserved as the query set
//! `Q`; the ground set `V` is every other index. Selections only ever draw
//! from `V`.
//!
//! Conventions that the closed forms leave open:
//!
//! * disparity-sum counts each unordered pair once;
//! * disparity-min is `0` on sets with fewer than two elements;
//! * log-determinant is `logdet(S_X + ridge·I)`;
//! * graph-cut's penalty sums ordered pairs of `X` including the diagonal;
//! * ties are broken towards the lowest index everywhere.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SimilarityMatrix;

/// Largest `C(n, β)` that [`brute_force_opt`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    #[serde(alias = "fl")]
    FacilityLocation,
    #[serde(alias = "gc")]
    GraphCut,
    #[serde(alias = "logdet")]
    LogDeterminant,
    #[serde(alias = "dmin")]
    DisparityMin,
    #[serde(alias = "dsum")]
    DisparitySum,
    Gcmi,
    Fl1mi,
    #[serde(alias = "logdetmi")]
    LogdetMi,
    Com,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 9] = [
        ObjectiveKind::FacilityLocation,
        ObjectiveKind::GraphCut,
        ObjectiveKind::LogDeterminant,
        ObjectiveKind::DisparityMin,
        ObjectiveKind::DisparitySum,
        ObjectiveKind::Gcmi,
        ObjectiveKind::Fl1mi,
        ObjectiveKind::LogdetMi,
        ObjectiveKind::Com,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::FacilityLocation => "facility-location",
            ObjectiveKind::GraphCut => "graph-cut",
            ObjectiveKind::LogDeterminant => "log-determinant",
            ObjectiveKind::DisparityMin => "disparity-min",
            ObjectiveKind::DisparitySum => "disparity-sum",
            ObjectiveKind::Gcmi => "gcmi",
            ObjectiveKind::Fl1mi => "fl1mi",
            ObjectiveKind::LogdetMi => "logdet-mi",
            ObjectiveKind::Com => "com",
        }
    }

    /// Parses the long names above and the short aliases `fl`, `gc`,
    /// `logdet`, `dmin`, `dsum`.
    pub fn parse(s: &str) -> Option<Self> {
        let kind = match s {
            "facility-location" | "fl" => ObjectiveKind::FacilityLocation,
            "graph-cut" | "gc" => ObjectiveKind::GraphCut,
            "log-determinant" | "logdet" => ObjectiveKind::LogDeterminant,
            "disparity-min" | "dmin" => ObjectiveKind::DisparityMin,
            "disparity-sum" | "dsum" => ObjectiveKind::DisparitySum,
            "gcmi" => ObjectiveKind::Gcmi,
            "fl1mi" => ObjectiveKind::Fl1mi,
            "logdet-mi" | "logdetmi" => ObjectiveKind::LogdetMi,
            "com" => ObjectiveKind::Com,
            _ => return None,
        };
        Some(kind)
    }

    pub fn needs_query(self) -> bool {
        matches!(self, ObjectiveKind::Gcmi | ObjectiveKind::Fl1mi | ObjectiveKind::LogdetMi | ObjectiveKind::Com)
    }

    /// Whether marginal gains are guaranteed non-increasing as the set grows,
    /// which is what makes stale gains valid upper bounds in lazy greedy.
    pub fn has_diminishing_returns(self) -> bool {
        !matches!(self, ObjectiveKind::DisparityMin | ObjectiveKind::DisparitySum | ObjectiveKind::LogdetMi)
    }

    /// Monotone for kernels in `[0, 1]` (graph-cut additionally needs `rho ≤ 1/2`).
    pub fn is_monotone(self) -> bool {
        matches!(
            self,
            ObjectiveKind::FacilityLocation
                | ObjectiveKind::GraphCut
                | ObjectiveKind::Gcmi
                | ObjectiveKind::Fl1mi
                | ObjectiveKind::Com
        )
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Concave transform used by the concave-over-modular objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concave {
    Sqrt,
    Log1p,
}

impl Concave {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Concave::Sqrt => x.max(0.0).sqrt(),
            Concave::Log1p => x.max(0.0).ln_1p(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveParams {
    /// Graph-cut diversity penalty.
    pub rho: f64,
    /// Query-relevance trade-off for the MI kinds.
    pub eta_mi: f64,
    /// GCMI scale.
    pub mi_scale: f64,
    /// Diagonal regularizer for every log-determinant.
    pub ridge: f64,
    pub psi: Concave,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self { rho: 0.5, eta_mi: 1.0, mi_scale: 1.0, ridge: 1e-6, psi: Concave::Sqrt }
    }
}

impl ObjectiveParams {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, ok: bool| {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("objective parameter {name} = {v} out of range")))
            }
        };
        check("rho", self.rho, self.rho >= 0.0)?;
        check("eta_mi", self.eta_mi, self.eta_mi >= 0.0)?;
        check("mi_scale", self.mi_scale, self.mi_scale >= 0.0)?;
        check("ridge", self.ridge, self.ridge > 0.0)
    }
}

/// One arm's set function: kind, parameters and the kernel it reads.
#[derive(Debug, Clone)]
pub struct SubmodularObjective {
    kind: ObjectiveKind,
    kernel: Arc<SimilarityMatrix>,
    params: ObjectiveParams,
    query: Vec<usize>,
    ground: Vec<usize>,
    is_query: Vec<bool>,
}

impl SubmodularObjective {
    pub fn new(
        kind: ObjectiveKind,
        kernel: Arc<SimilarityMatrix>,
        params: ObjectiveParams,
        query: Option<Vec<usize>>,
    ) -> Result<Self> {
        params.validate()?;
        let n = kernel.ground_size();
        let query = query.unwrap_or_default();
        if kind.needs_query() && query.is_empty() {
            return Err(Error::MissingQuery { kind: kind.name() });
        }
        let mut is_query = vec![false; n];
        for &q in &query {
            if q >= n {
                return Err(Error::IndexOutOfBounds { index: q, size: n });
            }
            if is_query[q] {
                return Err(Error::InvalidInput(format!("duplicate query index {q}")));
            }
            is_query[q] = true;
        }
        let ground: Vec<usize> = (0..n).filter(|&i| !is_query[i]).collect();
        if ground.is_empty() {
            return Err(Error::InvalidInput("ground set is empty once the query is removed".into()));
        }
        Ok(Self { kind, kernel, params, query, ground, is_query })
    }

    /// An objective with default parameters and no query set.
    pub fn plain(kind: ObjectiveKind, kernel: SimilarityMatrix) -> Result<Self> {
        Self::new(kind, Arc::new(kernel), ObjectiveParams::default(), None)
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn params(&self) -> &ObjectiveParams {
        &self.params
    }

    pub fn kernel(&self) -> &SimilarityMatrix {
        &self.kernel
    }

    pub fn ground(&self) -> &[usize] {
        &self.ground
    }

    pub fn query(&self) -> &[usize] {
        &self.query
    }

    fn check_subset(&self, subset: &[usize]) -> Result<()> {
        let n = self.kernel.ground_size();
        let mut seen = vec![false; n];
        for &i in subset {
            if i >= n {
                return Err(Error::IndexOutOfBounds { index: i, size: n });
            }
            if self.is_query[i] {
                return Err(Error::InvalidInput(format!("index {i} belongs to the query set")));
            }
            if seen[i] {
                return Err(Error::InvalidInput(format!("duplicate index {i} in subset")));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// Direct, non-incremental evaluation of `f(subset)`.
    pub fn evaluate(&self, subset: &[usize]) -> Result<f64> {
        if self.kind.needs_query() {
            return self.mi_evaluate(subset);
        }
        self.check_subset(subset)?;
        let k = &*self.kernel;
        let p = &self.params;
        let value = match self.kind {
            ObjectiveKind::FacilityLocation => {
                if subset.is_empty() {
                    0.0
                } else {
                    self.ground
                        .iter()
                        .map(|&i| subset.iter().map(|&j| k.get(i, j)).fold(f64::NEG_INFINITY, f64::max))
                        .sum()
                }
            }
            ObjectiveKind::GraphCut => {
                let cover: f64 = self.ground.iter().map(|&i| subset.iter().map(|&j| k.get(i, j)).sum::<f64>()).sum();
                let inner: f64 = subset.iter().map(|&i| subset.iter().map(|&j| k.get(i, j)).sum::<f64>()).sum();
                cover - p.rho * inner
            }
            ObjectiveKind::LogDeterminant => dense_logdet(&k.principal(subset), subset.len(), p.ridge)?,
            ObjectiveKind::DisparitySum => {
                let mut total = 0.0;
                for (a, &i) in subset.iter().enumerate() {
                    for &j in &subset[a + 1..] {
                        total += 1.0 - k.get(i, j);
                    }
                }
                total
            }
            ObjectiveKind::DisparityMin => {
                let mut best = f64::INFINITY;
                for (a, &i) in subset.iter().enumerate() {
                    for &j in &subset[a + 1..] {
                        best = best.min(1.0 - k.get(i, j));
                    }
                }
                if best.is_finite() {
                    best
                } else {
                    0.0
                }
            }
            _ => unreachable!("mutual-information kinds dispatch to mi_evaluate"),
        };
        Ok(value)
    }

    /// Closed forms for the query-conditioned kinds.
    pub fn mi_evaluate(&self, subset: &[usize]) -> Result<f64> {
        if !self.kind.needs_query() {
            return Err(Error::InvalidInput(format!("{} is not a mutual-information objective", self.kind)));
        }
        if self.query.is_empty() {
            return Err(Error::MissingQuery { kind: self.kind.name() });
        }
        self.check_subset(subset)?;
        let k = &*self.kernel;
        let p = &self.params;
        let q = &self.query;
        let value = match self.kind {
            ObjectiveKind::Gcmi => {
                let s: f64 = subset.iter().map(|&i| q.iter().map(|&j| k.get(i, j)).sum::<f64>()).sum();
                2.0 * p.mi_scale * s
            }
            ObjectiveKind::Fl1mi => {
                if subset.is_empty() {
                    0.0
                } else {
                    self.ground
                        .iter()
                        .map(|&i| {
                            let sel = subset.iter().map(|&j| k.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
                            let qry = q.iter().map(|&j| k.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
                            sel.min(p.eta_mi * qry)
                        })
                        .sum()
                }
            }
            ObjectiveKind::Com => {
                let relevance: f64 =
                    subset.iter().map(|&i| p.psi.apply(q.iter().map(|&j| k.get(i, j)).sum())).sum();
                let coverage: f64 = q.iter().map(|&j| p.psi.apply(subset.iter().map(|&i| k.get(i, j)).sum())).sum();
                p.eta_mi * relevance + coverage
            }
            ObjectiveKind::LogdetMi => logdet_mi(k, subset, q, p.eta_mi, p.ridge)?,
            _ => unreachable!(),
        };
        Ok(value)
    }

    /// Fresh incremental state at the empty set.
    pub fn state(&self) -> GainState<'_> {
        GainState::new(self)
    }
}

/// A chosen subset with its value and the per-step gains that built it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: Vec<usize>,
    pub value: f64,
    pub gains: Vec<f64>,
    pub budget: usize,
    /// Marginal-gain evaluations spent producing this selection.
    pub evaluations: usize,
}

/// Lower-triangular factor of `S_X + ridge·I`, grown one row per insertion.
#[derive(Debug, Clone, Default)]
pub struct CholeskyState {
    /// Row `r` holds `L[r][0..=r]`.
    rows: Vec<Vec<f64>>,
    members: Vec<usize>,
    logdet: f64,
}

impl CholeskyState {
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn factor_row(&self, r: usize) -> &[f64] {
        &self.rows[r]
    }

    /// Extends `partial` (a prefix of `L⁻¹ s_{X,k}`) to the full current size.
    fn catch_up(&self, kernel: &SimilarityMatrix, k: usize, partial: &mut Vec<f64>) {
        for r in partial.len()..self.rows.len() {
            let row = &self.rows[r];
            let mut v = kernel.get(self.members[r], k);
            for c in 0..r {
                v -= row[c] * partial[c];
            }
            partial.push(v / row[r]);
        }
    }

    /// Squared Schur complement pivot for adding `k` given its solved column.
    fn pivot(kernel: &SimilarityMatrix, ridge: f64, k: usize, solved: &[f64]) -> f64 {
        kernel.get(k, k) + ridge - solved.iter().map(|v| v * v).sum::<f64>()
    }

    fn push(&mut self, k: usize, mut solved: Vec<f64>, pivot: f64) {
        let diag = pivot.sqrt();
        solved.push(diag);
        self.rows.push(solved);
        self.members.push(k);
        self.logdet += 2.0 * diag.ln();
    }
}

enum KindState {
    Facility { best: Vec<f64> },
    GraphCut { cover: Vec<f64>, inner: Vec<f64> },
    LogDet { chol: CholeskyState, solved: Vec<Vec<f64>> },
    DisparitySum { sums: Vec<f64> },
    DisparityMin { nearest: Vec<f64>, current: f64 },
    Gcmi { relevance: Vec<f64> },
    Fl1mi { best: Vec<f64>, cap: Vec<f64> },
    Com { relevance: Vec<f64>, coverage: Vec<f64> },
    LogdetMi,
}

/// Incremental evaluator: `gain(k)` is `f(S ∪ {k}) − f(S)` for the current `S`.
pub struct GainState<'a> {
    obj: &'a SubmodularObjective,
    chosen: Vec<usize>,
    in_set: Vec<bool>,
    gains: Vec<f64>,
    value: f64,
    evaluations: usize,
    inner: KindState,
}

impl<'a> GainState<'a> {
    fn new(obj: &'a SubmodularObjective) -> Self {
        let k = &*obj.kernel;
        let n = k.ground_size();
        let p = &obj.params;
        let inner = match obj.kind {
            ObjectiveKind::FacilityLocation => KindState::Facility { best: vec![0.0; n] },
            ObjectiveKind::GraphCut => {
                let cover = (0..n).map(|j| obj.ground.iter().map(|&i| k.get(j, i)).sum()).collect();
                KindState::GraphCut { cover, inner: vec![0.0; n] }
            }
            ObjectiveKind::LogDeterminant => {
                KindState::LogDet { chol: CholeskyState::default(), solved: vec![Vec::new(); n] }
            }
            ObjectiveKind::DisparitySum => KindState::DisparitySum { sums: vec![0.0; n] },
            ObjectiveKind::DisparityMin => {
                KindState::DisparityMin { nearest: vec![f64::INFINITY; n], current: f64::INFINITY }
            }
            ObjectiveKind::Gcmi => {
                let relevance = (0..n)
                    .map(|i| 2.0 * p.mi_scale * obj.query.iter().map(|&j| k.get(i, j)).sum::<f64>())
                    .collect();
                KindState::Gcmi { relevance }
            }
            ObjectiveKind::Fl1mi => {
                let cap = (0..n)
                    .map(|i| p.eta_mi * obj.query.iter().map(|&j| k.get(i, j)).fold(f64::NEG_INFINITY, f64::max))
                    .collect();
                KindState::Fl1mi { best: vec![0.0; n], cap }
            }
            ObjectiveKind::Com => {
                let relevance = (0..n).map(|i| obj.query.iter().map(|&j| k.get(i, j)).sum()).collect();
                KindState::Com { relevance, coverage: vec![0.0; obj.query.len()] }
            }
            ObjectiveKind::LogdetMi => KindState::LogdetMi,
        };
        Self {
            obj,
            chosen: Vec::new(),
            in_set: vec![false; n],
            gains: Vec::new(),
            value: 0.0,
            evaluations: 0,
            inner,
        }
    }

    pub fn chosen(&self) -> &[usize] {
        &self.chosen
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    fn check_candidate(&self, k: usize) -> Result<()> {
        let n = self.in_set.len();
        if k >= n {
            return Err(Error::IndexOutOfBounds { index: k, size: n });
        }
        if self.obj.is_query[k] {
            return Err(Error::InvalidInput(format!("index {k} belongs to the query set")));
        }
        if self.in_set[k] {
            return Err(Error::AlreadySelected(k));
        }
        Ok(())
    }

    /// Marginal gain of adding `k`.
    pub fn gain(&mut self, k: usize) -> Result<f64> {
        self.check_candidate(k)?;
        self.evaluations += 1;
        let obj = self.obj;
        let ker = &*obj.kernel;
        let p = &obj.params;
        let g = match &mut self.inner {
            KindState::Facility { best } => {
                // the kernel is exactly symmetric, so row k is column k
                let row = ker.row(k);
                obj.ground.iter().map(|&i| (row[i] - best[i]).max(0.0)).sum()
            }
            KindState::GraphCut { cover, inner } => cover[k] - p.rho * (2.0 * inner[k] + ker.get(k, k)),
            KindState::LogDet { chol, solved } => {
                chol.catch_up(ker, k, &mut solved[k]);
                let pivot = CholeskyState::pivot(ker, p.ridge, k, &solved[k]);
                if !(pivot > 0.0) {
                    return Err(Error::NotPositiveDefinite("log-determinant pivot"));
                }
                pivot.ln()
            }
            KindState::DisparitySum { sums } => sums[k],
            KindState::DisparityMin { nearest, current } => match self.chosen.len() {
                0 => 0.0,
                1 => nearest[k],
                _ => current.min(nearest[k]) - *current,
            },
            KindState::Gcmi { relevance } => relevance[k],
            KindState::Fl1mi { best, cap } => {
                let row = ker.row(k);
                obj.ground.iter().map(|&i| best[i].max(row[i]).min(cap[i]) - best[i].min(cap[i])).sum()
            }
            KindState::Com { relevance, coverage } => {
                let own = p.eta_mi * p.psi.apply(relevance[k]);
                let spill: f64 = obj
                    .query
                    .iter()
                    .zip(coverage.iter())
                    .map(|(&j, &c)| p.psi.apply(c + ker.get(k, j)) - p.psi.apply(c))
                    .sum();
                own + spill
            }
            KindState::LogdetMi => {
                let mut with = self.chosen.clone();
                with.push(k);
                logdet_mi(ker, &with, &obj.query, p.eta_mi, p.ridge)? - self.value
            }
        };
        Ok(g)
    }

    /// Adds `k`, returning the gain it contributed.
    pub fn insert(&mut self, k: usize) -> Result<f64> {
        let g = self.gain(k)?;
        self.evaluations -= 1;
        let obj = self.obj;
        let ker = &*obj.kernel;
        let p = &obj.params;
        match &mut self.inner {
            KindState::Facility { best } => {
                let row = ker.row(k);
                for &i in &obj.ground {
                    best[i] = best[i].max(row[i]);
                }
            }
            KindState::GraphCut { inner, .. } => {
                for (acc, s) in inner.iter_mut().zip(ker.row(k)) {
                    *acc += s;
                }
            }
            KindState::LogDet { chol, solved } => {
                let col = std::mem::take(&mut solved[k]);
                let pivot = CholeskyState::pivot(ker, p.ridge, k, &col);
                chol.push(k, col, pivot);
            }
            KindState::DisparitySum { sums } => {
                for (acc, s) in sums.iter_mut().zip(ker.row(k)) {
                    *acc += 1.0 - s;
                }
            }
            KindState::DisparityMin { nearest, current } => {
                if !self.chosen.is_empty() {
                    *current = current.min(nearest[k]);
                }
                for (d, s) in nearest.iter_mut().zip(ker.row(k)) {
                    *d = d.min(1.0 - s);
                }
            }
            KindState::Gcmi { .. } => {}
            KindState::Fl1mi { best, .. } => {
                let row = ker.row(k);
                for &i in &obj.ground {
                    best[i] = best[i].max(row[i]);
                }
            }
            KindState::Com { coverage, .. } => {
                for (c, &j) in coverage.iter_mut().zip(obj.query.iter()) {
                    *c += ker.get(k, j);
                }
            }
            KindState::LogdetMi => {}
        }
        self.chosen.push(k);
        self.in_set[k] = true;
        self.gains.push(g);
        self.value += g;
        Ok(g)
    }

    /// The Cholesky factor, for log-determinant objectives.
    pub fn cholesky(&self) -> Option<&CholeskyState> {
        match &self.inner {
            KindState::LogDet { chol, .. } => Some(chol),
            _ => None,
        }
    }

    pub fn into_selection(self, budget: usize) -> Selection {
        Selection { chosen: self.chosen, value: self.value, gains: self.gains, budget, evaluations: self.evaluations }
    }
}

/// `f(S ∪ {candidate}) − f(S)` for an existing selection.
pub fn marginal_gain(obj: &SubmodularObjective, current: &Selection, candidate: usize) -> Result<f64> {
    if current.chosen.contains(&candidate) {
        return Err(Error::AlreadySelected(candidate));
    }
    let mut state = obj.state();
    for &c in &current.chosen {
        state.insert(c)?;
    }
    state.gain(candidate)
}

/// Plain greedy: every round re-evaluates every remaining candidate.
pub fn naive_greedy(obj: &SubmodularObjective, budget: usize) -> Result<Selection> {
    check_budget(budget)?;
    let mut state = obj.state();
    let target = budget.min(obj.ground.len());
    while state.chosen.len() < target {
        let mut best: Option<(usize, f64)> = None;
        for &k in &obj.ground {
            if state.in_set[k] {
                continue;
            }
            let g = state.gain(k)?;
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((k, g));
            }
        }
        let (k, _) = best.expect("ground set has unchosen candidates");
        state.insert(k)?;
    }
    Ok(state.into_selection(budget))
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    gain: f64,
    index: usize,
    round: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // Max-heap on gain; among equal gains the lower index surfaces first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then_with(|| other.index.cmp(&self.index))
    }
}

/// Accelerated greedy with stale upper bounds in a max-heap.
///
/// Kinds without diminishing returns get no valid upper bounds, so for those
/// this runs the plain greedy sweep.
pub fn lazy_greedy(obj: &SubmodularObjective, budget: usize) -> Result<Selection> {
    check_budget(budget)?;
    if !obj.kind.has_diminishing_returns() {
        return naive_greedy(obj, budget);
    }
    let mut state = obj.state();
    let target = budget.min(obj.ground.len());
    let mut heap = BinaryHeap::with_capacity(obj.ground.len());
    for &k in &obj.ground {
        heap.push(HeapEntry { gain: state.gain(k)?, index: k, round: 0 });
    }
    let mut round = 0;
    while state.chosen.len() < target {
        let top = heap.pop().expect("heap holds every unchosen candidate");
        if top.round == round {
            state.insert(top.index)?;
            round += 1;
        } else {
            let gain = state.gain(top.index)?;
            heap.push(HeapEntry { gain, index: top.index, round });
        }
    }
    Ok(state.into_selection(budget))
}

/// Exact maximizer over every subset of size at most `budget`.
///
/// Subsets are visited in lexicographic order of their sorted index lists and
/// only a strict improvement replaces the incumbent.
pub fn brute_force_opt(obj: &SubmodularObjective, budget: usize) -> Result<Selection> {
    check_budget(budget)?;
    let n = obj.ground.len();
    let subsets = binomial(n as u128, budget.min(n) as u128);
    if subsets > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchTooLarge { subsets, limit: BRUTE_FORCE_LIMIT });
    }
    let mut best_set: Vec<usize> = Vec::new();
    let mut best_val = obj.evaluate(&[])?;
    let mut evaluations = 1;
    let mut stack: Vec<usize> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    // Depth-first over positions in the ground set.
    let mut next = 0usize;
    loop {
        if current.len() < budget && next < n {
            stack.push(next);
            current.push(obj.ground[next]);
            let v = obj.evaluate(&current)?;
            evaluations += 1;
            if v > best_val {
                best_val = v;
                best_set = current.clone();
            }
            next += 1;
        } else {
            match stack.pop() {
                Some(pos) => {
                    current.pop();
                    next = pos + 1;
                }
                None => break,
            }
        }
    }
    let mut state = obj.state();
    for &k in &best_set {
        state.insert(k)?;
    }
    let gains = state.gains;
    Ok(Selection { chosen: best_set, value: best_val, gains, budget, evaluations })
}

fn check_budget(budget: usize) -> Result<()> {
    if budget == 0 {
        return Err(Error::InvalidInput("budget must be at least 1".into()));
    }
    Ok(())
}

pub fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// `logdet(M + ridge·I)` for a dense row-major `n × n` matrix.
pub fn dense_logdet(entries: &[f64], n: usize, ridge: f64) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let m = DMatrix::from_row_slice(n, n, entries) + DMatrix::identity(n, n) * ridge;
    let chol = m.cholesky().ok_or(Error::NotPositiveDefinite("log-determinant"))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

fn logdet_mi(k: &SimilarityMatrix, a: &[usize], q: &[usize], eta: f64, ridge: f64) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let na = a.len();
    let nq = q.len();
    let s_a = DMatrix::from_row_slice(na, na, &k.principal(a)) + DMatrix::identity(na, na) * ridge;
    let s_q = DMatrix::from_row_slice(nq, nq, &k.principal(q)) + DMatrix::identity(nq, nq) * ridge;
    let s_aq = DMatrix::from_fn(na, nq, |r, c| k.get(a[r], q[c]));
    let q_chol = s_q.cholesky().ok_or(Error::NotPositiveDefinite("query kernel S_Q"))?;
    let correction = &s_aq * q_chol.solve(&s_aq.transpose()) * (eta * eta);
    let reduced = &s_a - correction;
    let lhs = s_a.cholesky().ok_or(Error::NotPositiveDefinite("S_A"))?;
    let rhs = reduced.cholesky().ok_or(Error::NotPositiveDefinite("conditioned S_A"))?;
    let ld = |l: DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(ld(lhs.l()) - ld(rhs.l()))
}
