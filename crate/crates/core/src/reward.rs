//! Validation-driven reward for an arm.
//!
//! Everything here is a function of per-sample loss gradients. With mean
//! training gradient `ḡ`, validation gradient `g_val`, Hessian surrogate `H`
//! and step size `η`:
//!
//! ```text
//! pairwise   η·(g_i · g_val) − η²·g_iᵀ H ḡ_prefix
//! samplewise η·(ḡ · g_val)   − η²·ḡᵀ (I_d − (1/m)·1_{d×m}·Gᵀ) H ḡ
//! batchwise  η·(M1 · g_val)  − η²·Σ_{i≠j} m_iᵀ H m_j
//! ```
//!
//! In the samplewise form `(1/m)·1_{d×m}·Gᵀ` is the `d × d` matrix whose
//! every row is `ḡᵀ`, so the middle factor applied to `H ḡ` is
//! `H ḡ − 1_d·(ḡᵀ H ḡ)`. That product is evaluated without forming any
//! `d × d` intermediate.
//!
//! Column means use a correctly rounded sum, so every quantity is
//! bit-identical under any reordering of the gradient columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, fsum};
use crate::submod::Selection;

/// Largest parameter dimension for which the FIM surrogate is materialized.
pub const FIM_MAX_DIM: usize = 4096;

/// `d × m` matrix of per-sample gradients, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    data: Vec<f64>,
    d: usize,
    m: usize,
    pub step: usize,
}

impl GradientMatrix {
    pub fn new(data: Vec<f64>, d: usize, m: usize) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::InvalidInput("gradient matrix needs d ≥ 1 and m ≥ 1".into()));
        }
        if data.len() != d * m {
            return Err(Error::DimensionMismatch { context: "gradient matrix", expected: d * m, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient matrix"));
        }
        Ok(Self { data, d, m, step: 0 })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let d = columns.first().map(Vec::len).unwrap_or(0);
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::InvalidInput("gradient columns differ in length".into()));
        }
        Self::new(columns.concat(), d, columns.len())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// A new matrix holding the listed columns in the listed order.
    pub fn select(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::InvalidInput("column selection is empty".into()));
        }
        let mut data = Vec::with_capacity(cols.len() * self.d);
        for &c in cols {
            if c >= self.m {
                return Err(Error::IndexOutOfBounds { index: c, size: self.m });
            }
            data.extend_from_slice(self.column(c));
        }
        Ok(Self { data, d: self.d, m: cols.len(), step: self.step })
    }

    /// Column mean, correctly rounded per coordinate.
    pub fn mean(&self) -> Vec<f64> {
        let m = self.m as f64;
        (0..self.d).map(|r| fsum(self.columns().map(|c| c[r])) / m).collect()
    }
}

/// Stateful part of the FIM surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct FimState {
    /// Row-major symmetric `d × d`.
    pub matrix: Vec<f64>,
    pub d: usize,
    pub updates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HessianApprox {
    Identity,
    /// Exponential moving average of validation-gradient outer products.
    FimEma { state: Option<FimState>, momentum: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianKind {
    Identity,
    FimEma,
}

impl HessianApprox {
    pub fn fim(momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::InvalidInput(format!("FIM momentum must lie in (0, 1], got {momentum}")));
        }
        Ok(HessianApprox::FimEma { state: None, momentum })
    }

    pub fn kind(&self) -> HessianKind {
        match self {
            HessianApprox::Identity => HessianKind::Identity,
            HessianApprox::FimEma { .. } => HessianKind::FimEma,
        }
    }

    /// `H v`. A FIM surrogate with no observations yet acts as the identity.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            HessianApprox::Identity | HessianApprox::FimEma { state: None, .. } => Ok(v.to_vec()),
            HessianApprox::FimEma { state: Some(s), .. } => {
                if s.d != v.len() {
                    return Err(Error::DimensionMismatch { context: "hessian apply", expected: s.d, got: v.len() });
                }
                Ok(s.matrix.chunks_exact(s.d).map(|row| dot(row, v)).collect())
            }
        }
    }
}

/// One arm's expected marginal gain and its two components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    pub arm: usize,
    pub value: f64,
    /// Gradient-influence component.
    pub term1: f64,
    /// Hessian-weighted similarity component.
    pub term2: f64,
    pub lr: f64,
}

/// Both terms of a gain, `value = term1 − term2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainTerms {
    pub term1: f64,
    pub term2: f64,
    pub value: f64,
}

impl GainTerms {
    fn new(term1: f64, term2: f64) -> Self {
        Self { term1, term2, value: term1 - term2 }
    }
}

/// Reduction in validation loss after a step; positive means improvement.
pub fn exact_utility(val_loss_before: f64, val_loss_after: f64) -> f64 {
    val_loss_before - val_loss_after
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidInput(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    Ok(())
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { context, expected, got });
    }
    Ok(())
}

/// Gain of one training sample given the mean gradient of its prefix.
pub fn pairwise_gain(
    train_grad: &[f64],
    val_grad: &[f64],
    mean_prefix_grad: &[f64],
    hessian: &HessianApprox,
    lr: f64,
) -> Result<GainTerms> {
    check_lr(lr)?;
    let d = train_grad.len();
    check_len("validation gradient", d, val_grad.len())?;
    check_len("prefix mean gradient", d, mean_prefix_grad.len())?;
    let h_prefix = hessian.apply(mean_prefix_grad)?;
    Ok(GainTerms::new(lr * dot(train_grad, val_grad), lr * lr * dot(train_grad, &h_prefix)))
}

/// The order-free expected marginal gain of a set of samples.
pub fn samplewise_terms(grads: &GradientMatrix, val_grad: &[f64], hessian: &HessianApprox, lr: f64) -> Result<GainTerms> {
    check_lr(lr)?;
    check_len("validation gradient", grads.d(), val_grad.len())?;
    let mean = grads.mean();
    let term1 = lr * dot(&mean, val_grad);
    Ok(GainTerms::new(term1, lr * lr * hessian_term(&mean, hessian)?))
}

/// `ḡᵀ (I − 1_d ḡᵀ) H ḡ`, the part of the samplewise gain that does not
/// depend on the validation gradient.
fn hessian_term(mean: &[f64], hessian: &HessianApprox) -> Result<f64> {
    let h_mean = hessian.apply(mean)?;
    let quad = dot(mean, &h_mean);
    let mass: f64 = mean.iter().sum();
    Ok(quad - mass * quad)
}

pub fn samplewise_gain(grads: &GradientMatrix, val_grad: &[f64], hessian: &HessianApprox, lr: f64) -> Result<f64> {
    Ok(samplewise_terms(grads, val_grad, hessian, lr)?.value)
}

/// Expected marginal gain of an arm's selection, averaged over every
/// validation column.
pub fn arm_reward(
    arm: usize,
    selection: &Selection,
    grads: &GradientMatrix,
    val_grads: &GradientMatrix,
    hessian: &HessianApprox,
    lr: f64,
) -> Result<RewardEstimate> {
    if selection.chosen.is_empty() {
        return Err(Error::InvalidInput("arm selection is empty".into()));
    }
    check_lr(lr)?;
    check_len("validation gradients", grads.d(), val_grads.d())?;
    let chosen = grads.select(&selection.chosen)?;
    let mean = chosen.mean();
    let term2 = lr * lr * hessian_term(&mean, hessian)?;
    let n_val = val_grads.m() as f64;
    let term1 = fsum(val_grads.columns().map(|v| lr * dot(&mean, v))) / n_val;
    Ok(RewardEstimate { arm, value: term1 - term2, term1, term2, lr })
}

/// Gain of a set of batches, each represented by its mean gradient.
pub fn batchwise_gain(batch_means: &GradientMatrix, val_grad: &[f64], hessian: &HessianApprox, lr: f64) -> Result<f64> {
    Ok(batchwise_terms(batch_means, val_grad, hessian, lr)?.value)
}

pub fn batchwise_terms(
    batch_means: &GradientMatrix,
    val_grad: &[f64],
    hessian: &HessianApprox,
    lr: f64,
) -> Result<GainTerms> {
    check_lr(lr)?;
    let d = batch_means.d();
    check_len("validation gradient", d, val_grad.len())?;
    let total: Vec<f64> = (0..d).map(|r| fsum(batch_means.columns().map(|c| c[r]))).collect();
    let term1 = lr * dot(&total, val_grad);
    // Σ_{i≠j} m_iᵀ H m_j = (Σm)ᵀ H (Σm) − Σ_i m_iᵀ H m_i
    let full = dot(&total, &hessian.apply(&total)?);
    let mut diag = Vec::with_capacity(batch_means.m());
    for c in batch_means.columns() {
        diag.push(dot(c, &hessian.apply(c)?));
    }
    let cross = if batch_means.m() == 1 { 0.0 } else { full - fsum(diag) };
    Ok(GainTerms::new(term1, lr * lr * cross))
}

/// Folds a validation batch into the FIM surrogate.
///
/// The first call stores the plain batch average of `g gᵀ`; later calls mix
/// it in with weight `momentum`.
pub fn fim_update(state: &HessianApprox, val_grads: &GradientMatrix) -> Result<HessianApprox> {
    let (prev, momentum) = match state {
        HessianApprox::FimEma { state, momentum } => (state.as_ref(), *momentum),
        HessianApprox::Identity => {
            return Err(Error::InvalidInput("fim_update requires a FIM surrogate".into()));
        }
    };
    if !(momentum > 0.0 && momentum <= 1.0) {
        return Err(Error::InvalidInput(format!("FIM momentum must lie in (0, 1], got {momentum}")));
    }
    let d = val_grads.d();
    if d > FIM_MAX_DIM {
        return Err(Error::InvalidInput(format!(
            "FIM surrogate limited to d ≤ {FIM_MAX_DIM}; got d = {d}, use the identity surrogate"
        )));
    }
    if let Some(p) = prev {
        check_len("FIM state", p.d, d)?;
    }
    let n = val_grads.m() as f64;
    let mut batch = vec![0.0; d * d];
    for r in 0..d {
        for c in r..d {
            let v = val_grads.columns().map(|g| g[r] * g[c]).sum::<f64>() / n;
            batch[r * d + c] = v;
            batch[c * d + r] = v;
        }
    }
    let matrix = match prev {
        None => batch,
        Some(p) => p.matrix.iter().zip(&batch).map(|(old, new)| (1.0 - momentum) * old + momentum * new).collect(),
    };
    let updates = prev.map_or(0, |p| p.updates) + 1;
    Ok(HessianApprox::FimEma { state: Some(FimState { matrix, d, updates }), momentum })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sel(chosen: Vec<usize>) -> Selection {
        Selection { budget: chosen.len(), chosen, value: 0.0, gains: vec![], evaluations: 0 }
    }

    #[test]
    fn exact_utility_is_loss_reduction() {
        assert!((exact_utility(0.9, 0.7) - 0.2).abs() < 1e-15);
        assert_eq!(exact_utility(0.4, 0.4), 0.0);
    }

    #[test]
    fn zero_gradients_or_zero_step_give_zero() {
        let g = GradientMatrix::new(vec![0.0; 6], 3, 2).unwrap();
        assert_eq!(samplewise_gain(&g, &[1.0, 2.0, 3.0], &HessianApprox::Identity, 0.1).unwrap(), 0.0);
        let g = GradientMatrix::from_columns(&[vec![1.0, -2.0, 0.5]]).unwrap();
        assert_eq!(samplewise_gain(&g, &[1.0, 2.0, 3.0], &HessianApprox::Identity, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn samplewise_identity_example() {
        // G = I_2, g_val = (1,1), η = 0.1: ḡ = (½,½), ḡ·g_val = 1, ḡᵀḡ = ½,
        // Σḡ = 1, so the Hessian term is ½ − ½ = 0 and the gain is 0.1.
        let g = GradientMatrix::from_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = samplewise_gain(&g, &[1.0, 1.0], &HessianApprox::Identity, 0.1).unwrap();
        assert!((v - 0.1).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = GradientMatrix::from_columns(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            samplewise_gain(&g, &[1.0], &HessianApprox::Identity, 0.1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pairwise_cases() {
        let e1 = [1.0, 0.0];
        let t = pairwise_gain(&e1, &e1, &e1, &HessianApprox::Identity, 0.1).unwrap();
        assert!((t.value - 0.09).abs() < 1e-15);
        assert!((t.term1 - 0.1).abs() < 1e-15 && (t.term2 - 0.01).abs() < 1e-15);
        let t = pairwise_gain(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 3.0], &HessianApprox::Identity, 0.5).unwrap();
        assert_eq!(t.value, 0.0);
        let g = [0.3, -1.1];
        let v = [2.0, 0.7];
        let lr = 1e-7;
        let t = pairwise_gain(&g, &v, &[5.0, 5.0], &HessianApprox::Identity, lr).unwrap();
        assert!((t.value / lr - dot(&g, &v)).abs() < 1e-5);
    }

    #[test]
    fn arm_reward_degenerate_cases() {
        let g = GradientMatrix::from_columns(&[vec![1.0, 2.0], vec![-0.5, 0.25], vec![0.0, 1.0]]).unwrap();
        let val = GradientMatrix::from_columns(&[vec![0.3, -0.2]]).unwrap();
        let h = HessianApprox::Identity;
        let r = arm_reward(0, &sel(vec![2, 0, 1]), &g, &val, &h, 0.05).unwrap();
        assert_eq!(r.value, samplewise_gain(&g, val.column(0), &h, 0.05).unwrap());
        assert_eq!(r.value, r.term1 - r.term2);

        let twice = GradientMatrix::from_columns(&[vec![0.3, -0.2], vec![0.3, -0.2]]).unwrap();
        let r2 = arm_reward(0, &sel(vec![2, 0, 1]), &g, &twice, &h, 0.05).unwrap();
        assert_eq!(r2.value, r.value);

        assert!(arm_reward(0, &sel(vec![]), &g, &val, &h, 0.05).is_err());
    }

    #[test]
    fn batchwise_single_batch_has_no_second_term() {
        let m = GradientMatrix::from_columns(&[vec![1.0, 2.0]]).unwrap();
        let t = batchwise_terms(&m, &[1.0, 1.0], &HessianApprox::Identity, 0.1).unwrap();
        assert_eq!(t.term2, 0.0);
        assert!((t.value - 0.3).abs() < 1e-15);
        let z = GradientMatrix::new(vec![0.0; 6], 2, 3).unwrap();
        assert_eq!(batchwise_gain(&z, &[1.0, 1.0], &HessianApprox::Identity, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn fim_base_case_and_full_replacement() {
        let g = vec![1.0, -2.0];
        let cols = GradientMatrix::from_columns(&[g.clone()]).unwrap();
        let h = fim_update(&HessianApprox::fim(0.3).unwrap(), &cols).unwrap();
        let HessianApprox::FimEma { state: Some(s), .. } = &h else { panic!() };
        assert_eq!(s.matrix, vec![1.0, -2.0, -2.0, 4.0]);

        let other = GradientMatrix::from_columns(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let once = fim_update(&HessianApprox::fim(1.0).unwrap(), &other).unwrap();
        let seeded = fim_update(&HessianApprox::fim(1.0).unwrap(), &cols).unwrap();
        let replaced = fim_update(&seeded, &other).unwrap();
        let (HessianApprox::FimEma { state: Some(a), .. }, HessianApprox::FimEma { state: Some(b), .. }) =
            (&once, &replaced)
        else {
            panic!()
        };
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn fim_two_step_recursion() {
        // step 0: g = (1, 0) → H = [[1,0],[0,0]]
        // step 1: g = (0, 2) → batch [[0,0],[0,4]]; α = ½ → [[.5,0],[0,2]]
        let h0 = fim_update(&HessianApprox::fim(0.5).unwrap(), &GradientMatrix::from_columns(&[vec![1.0, 0.0]]).unwrap())
            .unwrap();
        let h1 = fim_update(&h0, &GradientMatrix::from_columns(&[vec![0.0, 2.0]]).unwrap()).unwrap();
        let HessianApprox::FimEma { state: Some(s), .. } = &h1 else { panic!() };
        assert_eq!(s.matrix, vec![0.5, 0.0, 0.0, 2.0]);
        assert_eq!(s.updates, 2);
    }

    #[test]
    fn fim_rejects_dimension_change_and_identity() {
        let h0 = fim_update(&HessianApprox::fim(0.5).unwrap(), &GradientMatrix::from_columns(&[vec![1.0, 0.0]]).unwrap())
            .unwrap();
        assert!(fim_update(&h0, &GradientMatrix::from_columns(&[vec![1.0]]).unwrap()).is_err());
        assert!(fim_update(&HessianApprox::Identity, &GradientMatrix::from_columns(&[vec![1.0]]).unwrap()).is_err());
        assert!(HessianApprox::fim(0.0).is_err());
    }
}
