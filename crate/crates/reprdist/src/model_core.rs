//! Finite-grid models `p(y|x) = softmax_y(f(x)ᵀg(y))`.
//!
//! A [`ModelTable`] stores `f` on `n` inputs (rows of an `n×M` matrix) and `g`
//! on `k` labels (rows of a `k×M` matrix). Everything downstream is computed
//! exactly on these tables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::moments;
use crate::{Error, Result};

/// Default cap on the condition number of `L` and `N`.
pub const DEFAULT_COND_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelTable {
    embeddings: DMatrix<f64>,
    unembeddings: DMatrix<f64>,
    input_ids: Vec<String>,
    label_ids: Vec<String>,
}

impl ModelTable {
    /// Builds a table with ids `x0, x1, …` and `y0, y1, …`.
    pub fn new(embeddings: DMatrix<f64>, unembeddings: DMatrix<f64>) -> Result<Self> {
        let input_ids = (0..embeddings.nrows()).map(|i| format!("x{i}")).collect();
        let label_ids = (0..unembeddings.nrows()).map(|j| format!("y{j}")).collect();
        Self::with_ids(embeddings, unembeddings, input_ids, label_ids)
    }

    pub fn with_ids(
        embeddings: DMatrix<f64>,
        unembeddings: DMatrix<f64>,
        input_ids: Vec<String>,
        label_ids: Vec<String>,
    ) -> Result<Self> {
        let m = embeddings.ncols();
        if m == 0 {
            return Err(Error::Shape("representation dimension must be positive".into()));
        }
        if unembeddings.ncols() != m {
            return Err(Error::Shape(format!("embeddings have dimension {m}, unembeddings {}", unembeddings.ncols())));
        }
        if embeddings.nrows() < m + 1 || unembeddings.nrows() < m + 1 {
            return Err(Error::Shape(format!(
                "need at least M+1 = {} inputs and labels, got {} and {}",
                m + 1,
                embeddings.nrows(),
                unembeddings.nrows()
            )));
        }
        if input_ids.len() != embeddings.nrows() || label_ids.len() != unembeddings.nrows() {
            return Err(Error::Shape("id list lengths do not match the tables".into()));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embeddings".into()));
        }
        if unembeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("unembeddings".into()));
        }
        Ok(Self { embeddings, unembeddings, input_ids, label_ids })
    }

    /// Representation dimension `M`.
    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn n_inputs(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.unembeddings.nrows()
    }

    pub fn embeddings(&self) -> &DMatrix<f64> {
        &self.embeddings
    }

    pub fn unembeddings(&self) -> &DMatrix<f64> {
        &self.unembeddings
    }

    pub fn input_ids(&self) -> &[String] {
        &self.input_ids
    }

    pub fn label_ids(&self) -> &[String] {
        &self.label_ids
    }

    /// `n×k` matrix of `f(x_i)ᵀg(y_j)`.
    pub fn logits(&self) -> DMatrix<f64> {
        &self.embeddings * self.unembeddings.transpose()
    }

    /// Label with the largest logit for each input (lowest index on ties).
    pub fn argmax_labels(&self) -> Vec<usize> {
        let z = self.logits();
        (0..z.nrows())
            .map(|i| {
                let row = z.row(i);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Same table with new embeddings (ids kept).
    pub fn with_embeddings(&self, embeddings: DMatrix<f64>) -> Result<Self> {
        Self::with_ids(embeddings, self.unembeddings.clone(), self.input_ids.clone(), self.label_ids.clone())
    }
}

/// `log p(y|x)` on the grid together with the input measure `p_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondLogProb {
    logp: DMatrix<f64>,
    weights: DVector<f64>,
}

impl CondLogProb {
    pub fn new(logp: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        moments::check_weights(&weights, logp.nrows())?;
        for i in 0..logp.nrows() {
            let row = logp.row(i);
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::NonFinite(format!("log-probability row {i}")));
            }
            let lse = log_sum_exp(row.iter().copied());
            if lse.abs() > 1e-10 {
                return Err(Error::Shape(format!("row {i} is not normalized (logsumexp {lse:e})")));
            }
        }
        Ok(Self { logp, weights })
    }

    pub fn logp(&self) -> &DMatrix<f64> {
        &self.logp
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn n_inputs(&self) -> usize {
        self.logp.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.logp.ncols()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.logp[(x, y)]
    }

    /// Column `y` as a vector over inputs.
    pub fn column(&self, y: usize) -> Vec<f64> {
        self.logp.column(y).iter().copied().collect()
    }

    pub(crate) fn same_grid(&self, other: &Self) -> Result<()> {
        if self.logp.shape() != other.logp.shape() {
            return Err(Error::Shape(format!("grids differ: {:?} vs {:?}", self.logp.shape(), other.logp.shape())));
        }
        if self.weights != other.weights {
            return Err(Error::Weights("the two distributions use different input weights".into()));
        }
        Ok(())
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Pivot input `x₀`, the inputs `X_LLV∖{x₀}`, pivot label `y₀` and `Y_LLV`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotConfig {
    pub x0: usize,
    pub x_llv: Vec<usize>,
    pub y0: usize,
    pub y_llv: Vec<usize>,
    pub excluded_label: usize,
}

impl PivotConfig {
    /// `Y_LLV` is every label except `excluded_label`, in ascending order.
    pub fn new(x0: usize, x_llv: Vec<usize>, y0: usize, excluded_label: usize, k: usize) -> Self {
        let y_llv = (0..k).filter(|&y| y != excluded_label).collect();
        Self { x0, x_llv, y0, y_llv, excluded_label }
    }

    pub fn validate(&self, n: usize, k: usize, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Pivots(msg));
        if self.x0 >= n || self.x_llv.iter().any(|&x| x >= n) {
            return bad(format!("input index out of range (n = {n})"));
        }
        if self.y0 >= k || self.excluded_label >= k || self.y_llv.iter().any(|&y| y >= k) {
            return bad(format!("label index out of range (k = {k})"));
        }
        if self.x_llv.len() != m {
            return bad(format!("need {m} inputs besides x0, got {}", self.x_llv.len()));
        }
        if self.x_llv.contains(&self.x0) {
            return bad("x0 appears in x_llv".into());
        }
        let mut xs = self.x_llv.clone();
        xs.sort_unstable();
        xs.dedup();
        if xs.len() != m {
            return bad("duplicate inputs in x_llv".into());
        }
        if self.y_llv.len() != k - 1 || self.y_llv.contains(&self.excluded_label) {
            return bad("y_llv must hold every label except the excluded one".into());
        }
        let mut ys = self.y_llv.clone();
        ys.sort_unstable();
        ys.dedup();
        if ys.len() != k - 1 {
            return bad("duplicate labels in y_llv".into());
        }
        if !self.y_llv.contains(&self.y0) {
            return bad("y0 must belong to y_llv".into());
        }
        if k < m + 2 {
            return bad(format!("need at least M+2 = {} labels for a pivot set", m + 2));
        }
        Ok(())
    }

    /// `Y_LLV∖{y₀}` in stored order.
    pub fn non_pivot_labels(&self) -> Vec<usize> {
        self.y_llv.iter().copied().filter(|&y| y != self.y0).collect()
    }

    /// The `M` labels whose displaced unembeddings form the columns of `L`.
    pub fn basis_labels(&self, m: usize) -> Vec<usize> {
        self.non_pivot_labels().into_iter().take(m).collect()
    }

    /// Same pivots with `L` built from `labels` instead of the leading ones.
    pub fn with_basis_labels(&self, labels: &[usize]) -> Self {
        let mut rest: Vec<usize> = self.non_pivot_labels().into_iter().filter(|y| !labels.contains(y)).collect();
        let mut y_llv = vec![self.y0];
        y_llv.extend_from_slice(labels);
        y_llv.append(&mut rest);
        Self { y_llv, ..self.clone() }
    }
}

/// `L` (columns `g₀(y_i)`) and `N` (columns `f₀(x_j)`) with condition numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrices {
    pub l: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub l_cond: f64,
    pub n_cond: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiversityReport {
    pub ok: bool,
    pub l_cond: f64,
    pub n_cond: f64,
}

/// 2-norm condition number; infinite for singular or non-square input.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() != a.ncols() || a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let s = a.clone().singular_values();
    let mx = s.iter().copied().fold(0.0, f64::max);
    let mn = s.iter().copied().fold(f64::INFINITY, f64::min);
    if mn <= 0.0 {
        f64::INFINITY
    } else {
        mx / mn
    }
}

/// Conditional log-probabilities with max-subtraction.
pub fn cond_log_probs(model: &ModelTable, weights: &DVector<f64>) -> Result<CondLogProb> {
    moments::check_weights(weights, model.n_inputs())?;
    let mut z = model.logits();
    for i in 0..z.nrows() {
        if let Some(j) = z.row(i).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogit { input: i, label: j });
        }
        let lse = log_sum_exp(z.row(i).iter().copied());
        z.row_mut(i).add_scalar_mut(-lse);
    }
    CondLogProb::new(z, weights.clone())
}

/// `f₀ = f − f(x₀)` and `g₀ = g − g(y₀)` as `n×M` and `k×M` tables.
pub fn displaced(model: &ModelTable, pivots: &PivotConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if pivots.x0 >= model.n_inputs() || pivots.y0 >= model.n_labels() {
        return Err(Error::Pivots("pivot index out of range".into()));
    }
    let f = model.embeddings();
    let g = model.unembeddings();
    let fx0 = f.row(pivots.x0).into_owned();
    let gy0 = g.row(pivots.y0).into_owned();
    let mut f0 = f.clone();
    for mut r in f0.row_iter_mut() {
        r -= &fx0;
    }
    let mut g0 = g.clone();
    for mut r in g0.row_iter_mut() {
        r -= &gy0;
    }
    Ok((f0, g0))
}

fn raw_projections(model: &ModelTable, pivots: &PivotConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    pivots.validate(model.n_inputs(), model.n_labels(), model.dim())?;
    let m = model.dim();
    let (f0, g0) = displaced(model, pivots)?;
    let labels = pivots.basis_labels(m);
    let l = DMatrix::from_fn(m, m, |r, c| g0[(labels[c], r)]);
    let n = DMatrix::from_fn(m, m, |r, c| f0[(pivots.x_llv[c], r)]);
    Ok((l, n))
}

/// Diversity judged by the condition numbers of `L` and `N` against `cap`.
pub fn check_diversity(model: &ModelTable, pivots: &PivotConfig, cap: f64) -> Result<DiversityReport> {
    let (l, n) = raw_projections(model, pivots)?;
    let l_cond = condition_number(&l);
    let n_cond = condition_number(&n);
    Ok(DiversityReport { ok: l_cond < cap && n_cond < cap, l_cond, n_cond })
}

pub fn build_projections(model: &ModelTable, pivots: &PivotConfig, cap: f64) -> Result<ProjectionMatrices> {
    let (l, n) = raw_projections(model, pivots)?;
    let l_cond = condition_number(&l);
    if l_cond >= cap {
        return Err(Error::Singular { which: "L".into(), cond: l_cond });
    }
    let n_cond = condition_number(&n);
    if n_cond >= cap {
        return Err(Error::Singular { which: "N".into(), cond: n_cond });
    }
    Ok(ProjectionMatrices { l, n, l_cond, n_cond })
}

/// Inverse of a square matrix whose condition number is below `cap`.
pub fn checked_inverse(a: &DMatrix<f64>, cap: f64, which: &str) -> Result<DMatrix<f64>> {
    let cond = condition_number(a);
    if cond >= cap {
        return Err(Error::Singular { which: which.into(), cond });
    }
    a.clone().try_inverse().ok_or_else(|| Error::Singular { which: which.into(), cond })
}

/// The model `(A⁻¹f, Aᵀg)`, which induces the same distribution.
pub fn apply_equivalence(model: &ModelTable, a: &DMatrix<f64>) -> Result<ModelTable> {
    let m = model.dim();
    if a.shape() != (m, m) {
        return Err(Error::Shape(format!("A must be {m}×{m}")));
    }
    let a_inv = checked_inverse(a, DEFAULT_COND_CAP, "A")?;
    let f = model.embeddings() * a_inv.transpose();
    let g = model.unembeddings() * a;
    ModelTable::with_ids(f, g, model.input_ids.clone(), model.label_ids.clone())
}

/// `L⁻ᵀL′ᵀ`, the linear map taking `f′` to `f` when the two models agree.
pub fn alignment_matrix(a: &ModelTable, b: &ModelTable, pivots: &PivotConfig) -> Result<DMatrix<f64>> {
    let pa = build_projections(a, pivots, DEFAULT_COND_CAP)?;
    let pb = build_projections(b, pivots, DEFAULT_COND_CAP)?;
    let l_inv = checked_inverse(&pa.l, DEFAULT_COND_CAP, "L")?;
    Ok(l_inv.transpose() * pb.l.transpose())
}

/// Weighted mean of `−log p(label_i | x_i)`.
pub fn nll(model: &ModelTable, labels: &[usize], weights: &DVector<f64>) -> Result<f64> {
    nll_of(&cond_log_probs(model, weights)?, labels)
}

pub fn nll_of(p: &CondLogProb, labels: &[usize]) -> Result<f64> {
    if labels.len() != p.n_inputs() {
        return Err(Error::Shape(format!("{} labels for {} inputs", labels.len(), p.n_inputs())));
    }
    if labels.iter().any(|&y| y >= p.n_labels()) {
        return Err(Error::Shape("label index out of range".into()));
    }
    Ok(labels.iter().enumerate().map(|(i, &y)| -p.weights()[i] * p.get(i, y)).sum::<f64>().max(0.0))
}

/// Two models on a shared grid with a shared input measure.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub a: ModelTable,
    pub b: ModelTable,
    pub p: CondLogProb,
    pub q: CondLogProb,
}

impl ModelPair {
    pub fn new(a: ModelTable, b: ModelTable, weights: &DVector<f64>) -> Result<Self> {
        if a.dim() != b.dim() || a.n_inputs() != b.n_inputs() || a.n_labels() != b.n_labels() {
            return Err(Error::Shape("models live on different grids or dimensions".into()));
        }
        let p = cond_log_probs(&a, weights)?;
        let q = cond_log_probs(&b, weights)?;
        Ok(Self { a, b, p, q })
    }

    pub fn uniform(a: ModelTable, b: ModelTable) -> Result<Self> {
        let w = moments::uniform(a.n_inputs());
        Self::new(a, b, &w)
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn weights(&self) -> &DVector<f64> {
        self.p.weights()
    }

    /// The pair with the roles of the two models exchanged.
    pub fn swapped(&self) -> Self {
        Self { a: self.b.clone(), b: self.a.clone(), p: self.q.clone(), q: self.p.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, k: usize, m: usize) -> ModelTable {
        let f = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
        let g = DMatrix::from_fn(k, m, |_, _| rng.random_range(-2.0..2.0));
        ModelTable::new(f, g).unwrap()
    }

    #[test]
    fn zero_embeddings_give_uniform_rows() {
        let m =
            ModelTable::new(DMatrix::zeros(4, 2), mat(&[&[1.0, 2.0], &[3.0, -1.0], &[0.5, 0.5], &[7.0, 0.0]])).unwrap();
        let p = cond_log_probs(&m, &moments::uniform(4)).unwrap();
        for v in p.logp().iter() {
            assert!((v + 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_logits_split_evenly() {
        let m = ModelTable::new(mat(&[&[1.0], &[0.3]]), mat(&[&[0.0], &[0.0]])).unwrap();
        let p = cond_log_probs(&m, &moments::uniform(2)).unwrap();
        assert!((p.get(0, 0).exp() - 0.5).abs() < 1e-15);
        assert!((p.get(0, 1).exp() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_three_zero_minus_three() {
        let g = mat(&[&[3.0, 0.0], &[0.0, 3.0], &[-3.0, 0.0]]);
        let f = mat(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let p = cond_log_probs(&ModelTable::new(f, g).unwrap(), &moments::uniform(3)).unwrap();
        // independent evaluation: e^3, e^0, e^-3 normalized
        let z: f64 = 3f64.exp() + 1.0 + (-3f64).exp();
        let expect = [3f64.exp() / z, 1.0 / z, (-3f64).exp() / z];
        for (j, e) in expect.iter().enumerate() {
            assert!((p.get(0, j).exp() - e).abs() < 1e-14);
        }
        assert!((p.get(0, 0).exp() - 0.95033).abs() < 5e-6);
        assert!((p.get(0, 1).exp() - 0.04731).abs() < 5e-6);
        assert!((p.get(0, 2).exp() - 0.00236).abs() < 5e-6);
    }

    #[test]
    fn huge_logits_stay_stable() {
        let f = mat(&[&[1e3, 0.0], &[0.0, 1e3], &[1.0, 1.0]]);
        let g = mat(&[&[1e3, 0.0], &[0.0, 1e3], &[-1e3, 0.0]]);
        let p = cond_log_probs(&ModelTable::new(f, g).unwrap(), &moments::uniform(3)).unwrap();
        assert!(p.logp().iter().all(|v| v.is_finite()));
        assert_eq!(p.get(0, 0), 0.0);
    }

    #[test]
    fn overflowing_logit_is_reported_with_position() {
        let f = mat(&[&[1.0, 0.0], &[1e200, 0.0], &[0.0, 1.0]]);
        let g = mat(&[&[1.0, 0.0], &[0.0, 1.0], &[1e200, 0.0]]);
        let m = ModelTable::new(f, g).unwrap();
        match cond_log_probs(&m, &moments::uniform(3)) {
            Err(Error::NonFiniteLogit { input, label }) => assert_eq!((input, label), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_inputs_rejected() {
        assert!(ModelTable::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 2)).is_err());
        assert!(ModelTable::new(DMatrix::zeros(3, 2), DMatrix::zeros(2, 2)).is_err());
    }

    fn pivots_2d() -> PivotConfig {
        PivotConfig::new(0, vec![1, 2], 0, 3, 4)
    }

    #[test]
    fn displacement_subtracts_pivot_rows() {
        let f = mat(&[&[1.0, 1.0], &[2.0, 1.0], &[0.0, 5.0]]);
        let g = mat(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]);
        let m = ModelTable::new(f, g).unwrap();
        let (f0, g0) = displaced(&m, &pivots_2d()).unwrap();
        assert_eq!(f0.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(f0.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_eq!(g0.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
    }

    #[test]
    fn displacement_ignores_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 6, 4, 2);
        let shifted = m.with_embeddings(m.embeddings().map(|v| v + 3.5)).unwrap();
        let (a, _) = displaced(&m, &pivots_2d()).unwrap();
        let (b, _) = displaced(&shifted, &pivots_2d()).unwrap();
        assert!((a - b).abs().max() < 1e-12);
    }

    #[test]
    fn identity_basis_is_diverse() {
        let g = mat(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[5.0, 5.0]]);
        let f = mat(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let m = ModelTable::new(f, g).unwrap();
        let piv = PivotConfig::new(0, vec![1, 2], 0, 3, 4);
        let d = check_diversity(&m, &piv, DEFAULT_COND_CAP).unwrap();
        assert!(d.ok);
        assert!((d.l_cond - 1.0).abs() < 1e-12);
        let proj = build_projections(&m, &piv, DEFAULT_COND_CAP).unwrap();
        assert!((proj.l - DMatrix::identity(2, 2)).abs().max() < 1e-15);
    }

    #[test]
    fn duplicated_unembeddings_are_not_diverse() {
        let g = mat(&[&[0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], &[5.0, 5.0]]);
        let f = mat(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let m = ModelTable::new(f, g).unwrap();
        let d = check_diversity(&m, &pivots_2d(), DEFAULT_COND_CAP).unwrap();
        assert!(!d.ok);
        assert!(matches!(build_projections(&m, &pivots_2d(), DEFAULT_COND_CAP), Err(Error::Singular { .. })));
    }

    #[test]
    fn scaling_unembeddings_scales_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_model(&mut rng, 5, 4, 2);
        let m2 = ModelTable::new(m.embeddings().clone(), m.unembeddings() * 2.0).unwrap();
        let l1 = build_projections(&m, &pivots_2d(), DEFAULT_COND_CAP).unwrap().l;
        let l2 = build_projections(&m2, &pivots_2d(), DEFAULT_COND_CAP).unwrap().l;
        assert!((&l1 * 2.0 - &l2).abs().max() < 1e-12);
        let i1 = l1.try_inverse().unwrap().transpose();
        let i2 = l2.try_inverse().unwrap().transpose();
        assert!((i1 * 0.5 - i2).abs().max() < 1e-12);
    }

    #[test]
    fn equivalence_preserves_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = random_model(&mut rng, 8, 5, 3);
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(3, 3) * 2.0;
            let m2 = apply_equivalence(&m, &a).unwrap();
            let w = moments::uniform(8);
            let p = cond_log_probs(&m, &w).unwrap();
            let q = cond_log_probs(&m2, &w).unwrap();
            assert!((p.logp() - q.logp()).abs().max() < 1e-10);
        }
    }

    #[test]
    fn doubling_map_halves_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng, 4, 4, 2);
        let m2 = apply_equivalence(&m, &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert!((m2.embeddings() * 2.0 - m.embeddings()).abs().max() < 1e-15);
        assert!((m.unembeddings() * 2.0 - m2.unembeddings()).abs().max() < 1e-15);
    }

    #[test]
    fn singular_map_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng, 4, 4, 2);
        assert!(apply_equivalence(&m, &DMatrix::from_element(2, 2, 1.0)).is_err());
    }

    #[test]
    fn alignment_recovers_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_model(&mut rng, 7, 5, 2);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0)) + DMatrix::identity(2, 2) * 3.0;
        let m2 = apply_equivalence(&m, &a).unwrap();
        let piv = PivotConfig::new(0, vec![1, 2], 0, 4, 5);
        let est = alignment_matrix(&m, &m2, &piv).unwrap();
        let back = m2.embeddings() * est.transpose();
        assert!((back - m.embeddings()).abs().max() < 1e-6);
    }

    #[test]
    fn nll_edge_cases() {
        let g = mat(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]);
        let u = ModelTable::new(DMatrix::zeros(3, 2), g.clone()).unwrap();
        let v = nll(&u, &[0, 1, 2], &moments::uniform(3)).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        let sharp = ModelTable::new(mat(&[&[1e4, 0.0], &[0.0, 1e4], &[-1e4, 0.0]]), g).unwrap();
        assert_eq!(nll(&sharp, &[0, 1, 2], &moments::uniform(3)).unwrap(), 0.0);
    }

    #[test]
    fn pivot_validation() {
        assert!(pivots_2d().validate(3, 4, 2).is_ok());
        let mut p = pivots_2d();
        p.x_llv = vec![0, 1];
        assert!(p.validate(3, 4, 2).is_err());
        let p = PivotConfig::new(0, vec![1, 2], 3, 3, 4);
        assert!(p.validate(3, 4, 2).is_err());
    }

    #[test]
    fn basis_relabelling_keeps_label_set() {
        let p = PivotConfig::new(0, vec![1, 2], 2, 0, 6);
        assert_eq!(p.basis_labels(2), vec![1, 3]);
        let q = p.with_basis_labels(&[4, 5]);
        assert_eq!(q.basis_labels(2), vec![4, 5]);
        let mut a = p.y_llv.clone();
        let mut b = q.y_llv.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
