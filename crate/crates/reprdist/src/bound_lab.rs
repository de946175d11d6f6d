//! Error terms relating two models' representations, the variance–correlation
//! identity, and the certificate `max d_SVD ≤ 2Mε` for `ε = d_LLV`.
//!
//! With `S = diag(1/ψ_x(y_i))` over the basis labels of `L`, the embedding error
//! is `ε_y(x) = S Lᵀf(x) − S′L′ᵀf′(x)` and `f = Ãf′ + h_f` exactly. On the
//! unembedding side `ε_x(y) = D(Nᵀg(y) − c) − D′(N′ᵀg′(y) − c′)` where
//! `c_j = log Z(x_j) − log Z(x₀)` is the log-partition gap at the basis inputs,
//! so `g = Bg′ + h_g + κ` with a label-independent offset `κ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constructions::perturb_embeddings;
use crate::metrics_distributional::{d_llv, psi_terms, select_pivots, PivotSearch};
use crate::metrics_representational::{d_svd, m_svd, standardize, standardized_cross_covariance, SampleMatrix};
use crate::model_core::{
    build_projections, checked_inverse, condition_number, ModelPair, ModelTable, PivotConfig, DEFAULT_COND_CAP,
};
use crate::moments;
use crate::{Error, Result};

/// Absolute slack on every inequality check.
pub const BOUND_SLACK: f64 = 1e-9;

/// `ψ_x` on the basis labels for both models, then `ψ_y` for both.
type PsiPair = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

fn psi_pair(pair: &ModelPair, pivots: &PivotConfig) -> Result<PsiPair> {
    pivots.validate(pair.a.n_inputs(), pair.a.n_labels(), pair.dim())?;
    let sp = psi_terms(&pair.p, pivots)?;
    let sq = psi_terms(&pair.q, pivots)?;
    let m = pair.dim();
    let mut v: Vec<String> = Vec::new();
    for (name, s) in [("first", &sp), ("second", &sq)] {
        // only the basis labels enter L
        for i in 0..m {
            if !(s.psi_x[i] > crate::metrics_distributional::PSI_FLOOR) {
                v.push(format!("{name} model: psi_x vanishes for label {}", s.labels[i]));
            }
            if !(s.psi_y[i] > crate::metrics_distributional::PSI_FLOOR) {
                v.push(format!("{name} model: psi_y vanishes for input {}", pivots.x_llv[i]));
            }
        }
    }
    if !v.is_empty() {
        return Err(Error::Assumption(v));
    }
    Ok((sp.psi_x[..m].to_vec(), sq.psi_x[..m].to_vec(), sp.psi_y, sq.psi_y))
}

/// `ε_y(x)` for every input, as an `n×M` matrix (column `i` ↔ basis label `i`).
pub fn epsilon_y_matrix(pair: &ModelPair, pivots: &PivotConfig) -> Result<DMatrix<f64>> {
    let (sp, sq, _, _) = psi_pair(pair, pivots)?;
    let labels = pivots.basis_labels(pair.dim());
    let y0 = pivots.y0;
    Ok(DMatrix::from_fn(pair.a.n_inputs(), labels.len(), |x, i| {
        let y = labels[i];
        (pair.p.get(x, y) - pair.p.get(x, y0)) / sp[i] - (pair.q.get(x, y) - pair.q.get(x, y0)) / sq[i]
    }))
}

pub fn epsilon_y_vector(pair: &ModelPair, pivots: &PivotConfig, x: usize) -> Result<DVector<f64>> {
    if x >= pair.a.n_inputs() {
        return Err(Error::InvalidArgument(format!("input {x} out of range")));
    }
    Ok(epsilon_y_matrix(pair, pivots)?.row(x).transpose())
}

/// `ε_x(y)` for every label, as a `k×M` matrix (column `j` ↔ basis input `j`).
pub fn epsilon_x_matrix(pair: &ModelPair, pivots: &PivotConfig) -> Result<DMatrix<f64>> {
    let (_, _, dp, dq) = psi_pair(pair, pivots)?;
    let x0 = pivots.x0;
    Ok(DMatrix::from_fn(pair.a.n_labels(), pivots.x_llv.len(), |y, j| {
        let x = pivots.x_llv[j];
        (pair.p.get(x, y) - pair.p.get(x0, y)) / dp[j] - (pair.q.get(x, y) - pair.q.get(x0, y)) / dq[j]
    }))
}

pub fn epsilon_x_vector(pair: &ModelPair, pivots: &PivotConfig, y: usize) -> Result<DVector<f64>> {
    if y >= pair.a.n_labels() {
        return Err(Error::InvalidArgument(format!("label {y} out of range")));
    }
    Ok(epsilon_x_matrix(pair, pivots)?.row(y).transpose())
}

/// `f(x) = Ã f′(x) + h_f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDecomposition {
    pub a_tilde: DMatrix<f64>,
    /// `h_f(x)` for every input, one per row.
    pub h: DMatrix<f64>,
}

pub fn embedding_decomposition(pair: &ModelPair, pivots: &PivotConfig) -> Result<EmbeddingDecomposition> {
    let (sp, sq, _, _) = psi_pair(pair, pivots)?;
    let la = build_projections(&pair.a, pivots, DEFAULT_COND_CAP)?.l;
    let lb = build_projections(&pair.b, pivots, DEFAULT_COND_CAP)?.l;
    let l_inv_t = checked_inverse(&la, DEFAULT_COND_CAP, "L")?.transpose();
    // S⁻¹S′ = diag(ψ/ψ′)
    let ratio = DMatrix::from_diagonal(&DVector::from_fn(sp.len(), |i, _| sp[i] / sq[i]));
    let a_tilde = &l_inv_t * ratio * lb.transpose();
    let s_inv = DMatrix::from_diagonal(&DVector::from_vec(sp));
    let eps = epsilon_y_matrix(pair, pivots)?;
    let h = eps * (l_inv_t * s_inv).transpose();
    Ok(EmbeddingDecomposition { a_tilde, h })
}

/// `g(y) = B g′(y) + h_g(y) + κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnembeddingDecomposition {
    pub b: DMatrix<f64>,
    /// `h_g(y)` for every label, one per row.
    pub h: DMatrix<f64>,
    /// Label-independent offset from the log-partition gaps.
    pub offset: DVector<f64>,
}

fn log_partition_gaps(model: &ModelTable, pivots: &PivotConfig) -> DVector<f64> {
    let z = model.logits();
    let lse = |i: usize| {
        let r = z.row(i);
        let mx = r.max();
        mx + r.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
    };
    let z0 = lse(pivots.x0);
    DVector::from_iterator(pivots.x_llv.len(), pivots.x_llv.iter().map(|&x| lse(x) - z0))
}

pub fn unembedding_decomposition(pair: &ModelPair, pivots: &PivotConfig) -> Result<UnembeddingDecomposition> {
    let (_, _, dp, dq) = psi_pair(pair, pivots)?;
    let na = build_projections(&pair.a, pivots, DEFAULT_COND_CAP)?.n;
    let nb = build_projections(&pair.b, pivots, DEFAULT_COND_CAP)?.n;
    let n_inv_t = checked_inverse(&na, DEFAULT_COND_CAP, "N")?.transpose();
    let ratio = DMatrix::from_diagonal(&DVector::from_fn(dp.len(), |j, _| dp[j] / dq[j]));
    let b = &n_inv_t * &ratio * nb.transpose();
    let d_inv = DMatrix::from_diagonal(&DVector::from_vec(dp));
    let eps = epsilon_x_matrix(pair, pivots)?;
    let h = eps * (&n_inv_t * d_inv).transpose();
    let c = log_partition_gaps(&pair.a, pivots);
    let c2 = log_partition_gaps(&pair.b, pivots);
    let offset = n_inv_t * (c - ratio * c2);
    Ok(UnembeddingDecomposition { b, h, offset })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarCorrRow {
    pub var_eps: f64,
    pub two_one_minus_corr: f64,
    pub gap: f64,
}

/// Per-component check of `Var[ε_i] = 2(1 − Corr)` on both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarCorrReport {
    pub embedding: Vec<VarCorrRow>,
    pub unembedding: Vec<VarCorrRow>,
}

impl VarCorrReport {
    pub fn max_gap(&self) -> f64 {
        self.embedding.iter().chain(&self.unembedding).map(|r| r.gap).fold(0.0, f64::max)
    }
}

fn var_corr_rows(eps: &DMatrix<f64>, z1: &DMatrix<f64>, z2: &DMatrix<f64>, w: &[f64]) -> Vec<VarCorrRow> {
    (0..eps.ncols())
        .map(|i| {
            let e: Vec<f64> = eps.column(i).iter().copied().collect();
            let a: Vec<f64> = z1.column(i).iter().copied().collect();
            let b: Vec<f64> = z2.column(i).iter().copied().collect();
            let var_eps = moments::var(&e, w);
            let rhs = 2.0 * (1.0 - moments::corr(&a, &b, w));
            VarCorrRow { var_eps, two_one_minus_corr: rhs, gap: (var_eps - rhs).abs() }
        })
        .collect()
}

pub fn var_corr_identity(pair: &ModelPair, pivots: &PivotConfig) -> Result<VarCorrReport> {
    let (z1, z2) = projected_embeddings(pair, pivots)?;
    let (w1, w2) = projected_unembeddings(pair, pivots)?;
    let ey = epsilon_y_matrix(pair, pivots)?;
    let ex_all = epsilon_x_matrix(pair, pivots)?;
    let ex = DMatrix::from_fn(pivots.y_llv.len(), ex_all.ncols(), |r, c| ex_all[(pivots.y_llv[r], c)]);
    Ok(VarCorrReport {
        embedding: var_corr_rows(&ey, z1.rows(), z2.rows(), pair.weights().as_slice()),
        unembedding: var_corr_rows(&ex, w1.rows(), w2.rows(), moments::uniform(ex.nrows()).as_slice()),
    })
}

/// `z₁ = Lᵀf(x)` and `z₂ = L′ᵀf′(x)` over all inputs, weighted by `p_D`.
pub fn projected_embeddings(pair: &ModelPair, pivots: &PivotConfig) -> Result<(SampleMatrix, SampleMatrix)> {
    let la = build_projections(&pair.a, pivots, DEFAULT_COND_CAP)?.l;
    let lb = build_projections(&pair.b, pivots, DEFAULT_COND_CAP)?.l;
    let w = pair.weights().clone();
    Ok((SampleMatrix::new(pair.a.embeddings() * la, w.clone())?, SampleMatrix::new(pair.b.embeddings() * lb, w)?))
}

/// `w₁ = Nᵀg(y)` and `w₂ = N′ᵀg′(y)` over `Y_LLV`, uniformly weighted.
pub fn projected_unembeddings(pair: &ModelPair, pivots: &PivotConfig) -> Result<(SampleMatrix, SampleMatrix)> {
    let na = build_projections(&pair.a, pivots, DEFAULT_COND_CAP)?.n;
    let nb = build_projections(&pair.b, pivots, DEFAULT_COND_CAP)?.n;
    let rows = |m: &ModelTable| {
        let g = m.unembeddings();
        DMatrix::from_fn(pivots.y_llv.len(), g.ncols(), |r, c| g[(pivots.y_llv[r], c)])
    };
    Ok((SampleMatrix::uniform(rows(&pair.a) * na)?, SampleMatrix::uniform(rows(&pair.b) * nb)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    /// `d_LLV` on the given pivots.
    pub epsilon: f64,
    pub lhs_emb: f64,
    pub lhs_unemb: f64,
    pub rhs: f64,
    /// `None` when a precondition fails; see `diagnostics`.
    pub holds: Option<bool>,
    pub vacuous: bool,
    pub pivots: PivotConfig,
    pub diagnostics: Vec<String>,
}

impl BoundCertificate {
    pub fn lhs(&self) -> f64 {
        self.lhs_emb.max(self.lhs_unemb)
    }
}

fn check_cond(m: &DMatrix<f64>, what: &str, diag: &mut Vec<String>) {
    let c = condition_number(m);
    if !(c < DEFAULT_COND_CAP) {
        diag.push(format!("{what} is singular (condition number {c:.3e})"));
    }
}

/// Checks the certificate on fixed pivots. Precondition failures are recorded
/// in the diagnostics and leave `holds` undefined.
pub fn verify_bound(pair: &ModelPair, pivots: &PivotConfig, lambda: f64) -> Result<BoundCertificate> {
    let m = pair.dim();
    let mut diag = Vec::new();
    pivots.validate(pair.a.n_inputs(), pair.a.n_labels(), m)?;
    let mut cert = BoundCertificate {
        epsilon: f64::NAN,
        lhs_emb: f64::NAN,
        lhs_unemb: f64::NAN,
        rhs: f64::NAN,
        holds: None,
        vacuous: true,
        pivots: pivots.clone(),
        diagnostics: Vec::new(),
    };
    for (name, model) in [("first", &pair.a), ("second", &pair.b)] {
        if let Err(e) = build_projections(model, pivots, DEFAULT_COND_CAP) {
            diag.push(format!("{name} model: {e}"));
        }
    }
    match d_llv(&pair.p, &pair.q, pivots, lambda) {
        Ok(r) => {
            cert.epsilon = r.value;
            cert.rhs = 2.0 * m as f64 * r.value;
            cert.vacuous = cert.rhs >= 1.0;
        }
        Err(Error::Assumption(v)) => diag.extend(v),
        Err(e) => return Err(e),
    }
    if !diag.is_empty() {
        cert.diagnostics = diag;
        return Ok(cert);
    }
    let (z1, z2) = projected_embeddings(pair, pivots)?;
    let (w1, w2) = projected_unembeddings(pair, pivots)?;
    for (a, b, tag) in [(&z1, &z2, "z"), (&w1, &w2, "w")] {
        match (standardized_cross_covariance(a, a), standardized_cross_covariance(a, b)) {
            (Ok(auto), Ok(cross)) => {
                check_cond(&auto, &format!("Σ_{tag}1{tag}1"), &mut diag);
                check_cond(&cross, &format!("Σ_{tag}1{tag}2"), &mut diag);
            }
            (Err(e), _) | (_, Err(e)) => diag.push(format!("{tag} samples: {e}")),
        }
    }
    match (d_svd(&z1, &z2), d_svd(&w1, &w2)) {
        (Ok(a), Ok(b)) => {
            cert.lhs_emb = a;
            cert.lhs_unemb = b;
        }
        (Err(e), _) | (_, Err(e)) => diag.push(format!("d_SVD: {e}")),
    }
    if diag.is_empty() {
        cert.holds = Some(cert.lhs() <= cert.rhs + BOUND_SLACK);
    }
    cert.diagnostics = diag;
    Ok(cert)
}

/// `max d_SVD` over every admissible `L` built from `M` labels of `Y_LLV∖{y₀}`
/// together with the unembedding side on the pivot inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxDsvd {
    pub value: f64,
    pub emb: f64,
    pub unemb: f64,
    /// Basis labels attaining `emb`.
    pub emb_labels: Vec<usize>,
    pub subsets_evaluated: usize,
}

fn combinations(items: &[usize], m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(m);
    fn rec(items: &[usize], m: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, m, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, m, 0, &mut cur, &mut out);
    out
}

pub fn max_d_svd(pair: &ModelPair, pivots: &PivotConfig) -> Result<MaxDsvd> {
    let m = pair.dim();
    pivots.validate(pair.a.n_inputs(), pair.a.n_labels(), m)?;
    let mut emb = f64::NEG_INFINITY;
    let mut emb_labels = Vec::new();
    let mut evaluated = 0;
    for labels in combinations(&pivots.non_pivot_labels(), m) {
        let piv = pivots.with_basis_labels(&labels);
        let Ok((z1, z2)) = projected_embeddings(pair, &piv) else { continue };
        let Ok(d) = d_svd(&z1, &z2) else { continue };
        evaluated += 1;
        if d > emb {
            emb = d;
            emb_labels = labels;
        }
    }
    if evaluated == 0 {
        return Err(Error::NoFeasiblePivot("no label subset gives an invertible L with varying projections".into()));
    }
    let (w1, w2) = projected_unembeddings(pair, pivots)?;
    let unemb = d_svd(&w1, &w2)?;
    Ok(MaxDsvd { value: emb.max(unemb), emb, unemb, emb_labels, subsets_evaluated: evaluated })
}

/// `m_SVD(z, w) ≥ 1 − √(M Σ_l Var[z′_l − w′_l])` on standardized joint samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteriorCheck {
    pub m_svd: f64,
    pub lower: f64,
    pub holds: bool,
}

pub fn interior_bound(z: &SampleMatrix, w: &SampleMatrix) -> Result<InteriorCheck> {
    let zs = standardize(z)?;
    let ws = standardize(w)?;
    let wt = z.weights().as_slice();
    let m = z.dim();
    let sum: f64 = (0..m)
        .map(|l| {
            let d: Vec<f64> = zs.rows().column(l).iter().zip(ws.rows().column(l).iter()).map(|(a, b)| a - b).collect();
            moments::var(&d, wt)
        })
        .sum();
    let lower = 1.0 - (m as f64 * sum).sqrt();
    let value = m_svd(z, w)?;
    Ok(InteriorCheck { m_svd: value, lower, holds: value >= lower - BOUND_SLACK })
}

/// Interior inequality on the projected embeddings and unembeddings of a
/// pair; sides whose projections cannot be formed are left out.
pub fn interior_checks(pair: &ModelPair, pivots: &PivotConfig) -> Vec<InteriorCheck> {
    let sides = [projected_embeddings(pair, pivots), projected_unembeddings(pair, pivots)];
    sides.into_iter().filter_map(|s| s.and_then(|(a, b)| interior_bound(&a, &b)).ok()).collect()
}

/// Reference model and noise grid for the perturbation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub sigmas: Vec<f64>,
    pub seed: u64,
    pub lambda: f64,
    pub search: PivotSearch,
}

impl Default for NoiseSweep {
    /// Ten evenly spaced σ in `[0, 0.2]`, noise seed 1.
    fn default() -> Self {
        Self {
            sigmas: (0..10).map(|i| 0.2 * i as f64 / 9.0).collect(),
            seed: 1,
            lambda: crate::metrics_distributional::DEFAULT_LAMBDA,
            search: PivotSearch::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub certificate: BoundCertificate,
    pub interior: Vec<InteriorCheck>,
}

/// Perturbs the reference embeddings at every σ (sorted ascending), selects
/// pivots for each pair and certifies the bound.
pub fn noise_sweep(reference: &ModelTable, weights: &DVector<f64>, sweep: &NoiseSweep) -> Result<Vec<SweepPoint>> {
    let mut sigmas = sweep.sigmas.clone();
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("empty sigma grid".into()));
    }
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidArgument("sigmas must be finite and nonnegative".into()));
    }
    sigmas.sort_by(f64::total_cmp);
    use rayon::prelude::*;
    sigmas
        .par_iter()
        .map(|&sigma| {
            let other = perturb_embeddings(reference, sigma, sweep.seed)?;
            let pair = ModelPair::new(reference.clone(), other, weights)?;
            let pivots = select_pivots(&pair.p, &pair.q, pair.dim(), Some((&pair.a, &pair.b)), &sweep.search)?;
            let certificate = verify_bound(&pair, &pivots, sweep.lambda)?;
            Ok(SweepPoint { sigma, certificate, interior: interior_checks(&pair, &pivots) })
        })
        .collect()
}
