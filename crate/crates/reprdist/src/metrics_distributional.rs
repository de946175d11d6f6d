//! Distances between conditional distributions: expected KL divergence and the
//! log-likelihood variance (LLV) distance with its pivot search.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model_core::{check_diversity, CondLogProb, ModelTable, PivotConfig, DEFAULT_COND_CAP};
use crate::moments;
use crate::{Error, Result};

/// Default weight on the ψ-difference terms.
pub const DEFAULT_LAMBDA: f64 = 1e-5;

/// ψ values at or below this are treated as vanished.
pub const PSI_FLOOR: f64 = 1e-12;

/// `Σ_x w(x) Σ_y p(y|x) (log p − log q)`.
pub fn d_kl(p: &CondLogProb, q: &CondLogProb) -> Result<f64> {
    p.same_grid(q)?;
    let mut total = 0.0;
    for i in 0..p.n_inputs() {
        let mut row = 0.0;
        for j in 0..p.n_labels() {
            let lp = p.get(i, j);
            if lp == f64::NEG_INFINITY {
                continue;
            }
            row += lp.exp() * (lp - q.get(i, j));
        }
        total += p.weights()[i] * row;
    }
    Ok(total.max(0.0))
}

/// Standard deviations of pivot-referenced log-ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiTerms {
    /// Labels of `Y_LLV∖{y₀}`, aligned with `psi_x`.
    pub labels: Vec<usize>,
    /// `√Var_x[log p(y|x) − log p(y₀|x)]` under the input weights.
    pub psi_x: Vec<f64>,
    /// `√Var_y[log p(y|x) − log p(y|x₀)]`, uniform over `Y_LLV`, aligned with `x_llv`.
    pub psi_y: Vec<f64>,
    pub violations: Vec<String>,
}

pub fn psi_terms(p: &CondLogProb, pivots: &PivotConfig) -> Result<PsiTerms> {
    check_indices(p, pivots)?;
    let labels = pivots.non_pivot_labels();
    let w = p.weights().as_slice();
    let mut violations = Vec::new();
    let psi_x: Vec<f64> = labels
        .iter()
        .map(|&y| {
            let d: Vec<f64> = (0..p.n_inputs()).map(|x| p.get(x, y) - p.get(x, pivots.y0)).collect();
            let s = moments::var(&d, w).sqrt();
            if !(s > PSI_FLOOR) {
                violations.push(format!("psi_x(y={y}) vanishes: log p(y|x) - log p(y0|x) is constant in x"));
            }
            s
        })
        .collect();
    let psi_y: Vec<f64> = pivots
        .x_llv
        .iter()
        .map(|&x| {
            let s = psi_y_at(p, pivots.x0, x, &pivots.y_llv);
            if !(s > PSI_FLOOR) {
                violations.push(format!("psi_y(x={x}) vanishes: log p(y|x) - log p(y|x0) is constant in y"));
            }
            if p.weights()[x] <= 0.0 {
                violations.push(format!("input {x} has zero weight"));
            }
            s
        })
        .collect();
    Ok(PsiTerms { labels, psi_x, psi_y, violations })
}

fn psi_y_at(p: &CondLogProb, x0: usize, x: usize, labels: &[usize]) -> f64 {
    let d: Vec<f64> = labels.iter().map(|&y| p.get(x, y) - p.get(x0, y)).collect();
    moments::var_uniform(&d).sqrt()
}

fn check_indices(p: &CondLogProb, pivots: &PivotConfig) -> Result<()> {
    let n = p.n_inputs();
    let k = p.n_labels();
    if pivots.x0 >= n || pivots.x_llv.iter().any(|&x| x >= n) {
        return Err(Error::Pivots(format!("input index out of range (n = {n})")));
    }
    if pivots.y0 >= k || pivots.y_llv.iter().any(|&y| y >= k) {
        return Err(Error::Pivots(format!("label index out of range (k = {k})")));
    }
    if !pivots.y_llv.contains(&pivots.y0) || pivots.y_llv.contains(&pivots.excluded_label) {
        return Err(Error::Pivots("inconsistent label set".into()));
    }
    if pivots.x_llv.contains(&pivots.x0) {
        return Err(Error::Pivots("x0 appears in x_llv".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlvReport {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub lambda: f64,
    pub value: f64,
    pub pivots: PivotConfig,
    pub violations: Vec<String>,
}

/// `√Var_w[a/sa − b/sb]`.
fn scaled_diff_std(a: &[f64], sa: f64, b: &[f64], sb: f64, w: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| u / sa - v / sb).collect();
    moments::var(&d, w).sqrt()
}

fn t1_term(p: &CondLogProb, q: &CondLogProb, y0: usize, labels: &[usize], psi_p: &[f64], psi_q: &[f64]) -> f64 {
    let w = p.weights().as_slice();
    let p0 = p.column(y0);
    let q0 = q.column(y0);
    let mut t = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        let a = scaled_diff_std(&p.column(y), psi_p[i], &q.column(y), psi_q[i], w);
        let b = scaled_diff_std(&p0, psi_p[i], &q0, psi_q[i], w);
        t = t.max(a).max(b);
    }
    t
}

fn t2_term(
    p: &CondLogProb,
    q: &CondLogProb,
    x0: usize,
    xs: &[usize],
    y_llv: &[usize],
    psi_p: &[f64],
    psi_q: &[f64],
) -> f64 {
    let w = moments::uniform(y_llv.len());
    let w = w.as_slice();
    let row = |c: &CondLogProb, x: usize| -> Vec<f64> { y_llv.iter().map(|&y| c.get(x, y)).collect() };
    let p0 = row(p, x0);
    let q0 = row(q, x0);
    let mut t = 0.0f64;
    for (j, &x) in xs.iter().enumerate() {
        let a = scaled_diff_std(&row(p, x), psi_p[j], &row(q, x), psi_q[j], w);
        let b = scaled_diff_std(&p0, psi_p[j], &q0, psi_q[j], w);
        t = t.max(a).max(b);
    }
    t
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

/// `max{t1, t2, λ·t3, λ·t4}` on fixed pivots.
pub fn d_llv(p: &CondLogProb, q: &CondLogProb, pivots: &PivotConfig, lambda: f64) -> Result<LlvReport> {
    p.same_grid(q)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let sp = psi_terms(p, pivots)?;
    let sq = psi_terms(q, pivots)?;
    if !sp.violations.is_empty() || !sq.violations.is_empty() {
        let mut v: Vec<String> = sp.violations.iter().map(|s| format!("first model: {s}")).collect();
        v.extend(sq.violations.iter().map(|s| format!("second model: {s}")));
        return Err(Error::Assumption(v));
    }
    let t1 = t1_term(p, q, pivots.y0, &sp.labels, &sp.psi_x, &sq.psi_x);
    let t2 = t2_term(p, q, pivots.x0, &pivots.x_llv, &pivots.y_llv, &sp.psi_y, &sq.psi_y);
    let t3 = max_abs_diff(&sp.psi_x, &sq.psi_x);
    let t4 = max_abs_diff(&sp.psi_y, &sq.psi_y);
    let value = t1.max(t2).max(lambda * t3).max(lambda * t4);
    let mut violations = Vec::new();
    for (name, s) in [("first", &sp), ("second", &sq)] {
        if s.psi_x.iter().chain(&s.psi_y).any(|&v| v < 1e-8) {
            violations.push(format!("{name} model has a psi term below 1e-8; the distance is poorly conditioned"));
        }
    }
    Ok(LlvReport { t1, t2, t3, t4, lambda, value, pivots: pivots.clone(), violations })
}

/// Options for [`select_pivots`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotSearch {
    pub n_input_sets: usize,
    pub seed: u64,
    pub cond_cap: f64,
}

impl Default for PivotSearch {
    fn default() -> Self {
        Self { n_input_sets: 200, seed: 0, cond_cap: DEFAULT_COND_CAP }
    }
}

/// Pivots for comparing `p` and `q` in dimension `dim`.
///
/// Every ordered `(y₀, excluded)` pair is scored by `t1`; then `n_input_sets`
/// random sets of `dim + 1` inputs are scored by `t2`. Candidates whose ψ terms
/// vanish, or whose `L`/`N` fail the diversity cap when `models` is given, are
/// skipped. Ties go to the lowest indices.
pub fn select_pivots(
    p: &CondLogProb,
    q: &CondLogProb,
    dim: usize,
    models: Option<(&ModelTable, &ModelTable)>,
    opts: &PivotSearch,
) -> Result<PivotConfig> {
    let ms = models.map(|(a, b)| vec![a, b]);
    select_pivots_group(&[p, q], dim, ms.as_deref(), opts)
}

/// Shared pivots for a group of distributions, scored by the mean term over all pairs.
pub fn select_pivots_group(
    dists: &[&CondLogProb],
    dim: usize,
    models: Option<&[&ModelTable]>,
    opts: &PivotSearch,
) -> Result<PivotConfig> {
    if dists.len() < 2 {
        return Err(Error::InvalidArgument("need at least two distributions".into()));
    }
    for d in &dists[1..] {
        dists[0].same_grid(d)?;
    }
    if let Some(ms) = models {
        if ms.len() != dists.len() || ms.iter().any(|m| m.dim() != dim) {
            return Err(Error::Shape("models do not match the distributions".into()));
        }
    }
    let n = dists[0].n_inputs();
    let k = dists[0].n_labels();
    if k < 3 || k < dim + 2 {
        return Err(Error::NoFeasiblePivot(format!("need at least max(3, M+2) labels, have {k}")));
    }
    if n < dim + 1 {
        return Err(Error::NoFeasiblePivot(format!("need at least M+1 inputs, have {n}")));
    }
    let pairs: Vec<(usize, usize)> = (0..dists.len()).flat_map(|i| (i + 1..dists.len()).map(move |j| (i, j))).collect();
    let npairs = pairs.len() as f64;

    // label stage
    let mut best_labels: Option<(f64, usize, usize)> = None;
    for y0 in 0..k {
        for ex in 0..k {
            if ex == y0 {
                continue;
            }
            let probe = PivotConfig::new(0, Vec::new(), y0, ex, k);
            let labels = probe.non_pivot_labels();
            let mut psis = Vec::with_capacity(dists.len());
            let mut feasible = true;
            for d in dists {
                let w = d.weights().as_slice();
                let ps: Vec<f64> = labels
                    .iter()
                    .map(|&y| {
                        let r: Vec<f64> = (0..n).map(|x| d.get(x, y) - d.get(x, y0)).collect();
                        moments::var(&r, w).sqrt()
                    })
                    .collect();
                if ps.iter().any(|&s| !(s > PSI_FLOOR)) {
                    feasible = false;
                    break;
                }
                psis.push(ps);
            }
            if feasible {
                if let Some(ms) = models {
                    feasible = ms.iter().all(|m| label_basis_ok(m, y0, ex, opts.cond_cap));
                }
            }
            if !feasible {
                continue;
            }
            let score =
                pairs.iter().map(|&(i, j)| t1_term(dists[i], dists[j], y0, &labels, &psis[i], &psis[j])).sum::<f64>()
                    / npairs;
            if best_labels.is_none_or(|(b, _, _)| score < b) {
                best_labels = Some((score, y0, ex));
            }
        }
    }
    let (_, y0, ex) =
        best_labels.ok_or_else(|| Error::NoFeasiblePivot("no (y0, excluded) pair satisfies the assumptions".into()))?;
    let base = PivotConfig::new(0, Vec::new(), y0, ex, k);

    // input stage
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best_inputs: Option<(f64, Vec<usize>)> = None;
    for _ in 0..opts.n_input_sets {
        let set = sample(&mut rng, n, dim + 1).into_vec();
        let x0 = set[0];
        let xs = &set[1..];
        if xs.iter().chain([&x0]).any(|&x| dists[0].weights()[x] <= 0.0) {
            continue;
        }
        let psis: Vec<Vec<f64>> =
            dists.iter().map(|d| xs.iter().map(|&x| psi_y_at(d, x0, x, &base.y_llv)).collect()).collect();
        if psis.iter().flatten().any(|&s| !(s > PSI_FLOOR)) {
            continue;
        }
        if let Some(ms) = models {
            if !ms.iter().all(|m| input_basis_ok(m, x0, xs, opts.cond_cap)) {
                continue;
            }
        }
        let score = pairs
            .iter()
            .map(|&(i, j)| t2_term(dists[i], dists[j], x0, xs, &base.y_llv, &psis[i], &psis[j]))
            .sum::<f64>()
            / npairs;
        if best_inputs.as_ref().is_none_or(|(b, _)| score < *b) {
            best_inputs = Some((score, set));
        }
    }
    let (_, set) = best_inputs.ok_or_else(|| {
        Error::NoFeasiblePivot(format!(
            "none of {} sampled input sets is feasible; use a larger or more varied grid",
            opts.n_input_sets
        ))
    })?;
    Ok(PivotConfig { x0: set[0], x_llv: set[1..].to_vec(), ..base })
}

fn label_basis_ok(m: &ModelTable, y0: usize, excluded: usize, cap: f64) -> bool {
    let piv = PivotConfig::new(0, (1..=m.dim()).collect(), y0, excluded, m.n_labels());
    matches!(check_diversity(m, &piv, cap), Ok(d) if d.l_cond < cap)
}

fn input_basis_ok(m: &ModelTable, x0: usize, xs: &[usize], cap: f64) -> bool {
    let k = m.n_labels();
    let piv = PivotConfig::new(x0, xs.to_vec(), 0, k - 1, k);
    matches!(check_diversity(m, &piv, cap), Ok(d) if d.n_cond < cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_core::cond_log_probs;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn random_cond(rng: &mut ChaCha8Rng, n: usize, k: usize, m: usize) -> (ModelTable, CondLogProb) {
        let f = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
        let g = DMatrix::from_fn(k, m, |_, _| rng.random_range(-2.0..2.0));
        let mt = ModelTable::new(f, g).unwrap();
        let p = cond_log_probs(&mt, &moments::uniform(n)).unwrap();
        (mt, p)
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, p) = random_cond(&mut rng, 6, 4, 2);
        assert_eq!(d_kl(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_against_uniform_by_hand() {
        let p_row = [0.95033, 0.04731, 0.00236];
        let s: f64 = p_row.iter().sum();
        let pr: Vec<f64> = p_row.iter().map(|v| v / s).collect();
        let mk = |row: &[f64]| {
            let l = DMatrix::from_fn(1, 3, |_, j| row[j].ln());
            CondLogProb::new(l, DVector::from_element(1, 1.0)).unwrap()
        };
        let p = mk(&pr);
        let q = mk(&[1.0 / 3.0; 3]);
        let expect: f64 = pr.iter().map(|v| v * (3.0 * v).ln()).sum();
        assert!((d_kl(&p, &q).unwrap() - expect).abs() < 1e-14);
        assert!(d_kl(&q, &p).unwrap() != d_kl(&p, &q).unwrap());
    }

    #[test]
    fn two_point_psi() {
        // log-ratios a = 0.3, b = 1.1 for label 1 against pivot 0
        let rows: [[f64; 4]; 3] = [[0.0, 0.3, 0.0, 0.0], [0.0, 1.1, 0.7, -0.2], [0.2, 0.4, 0.9, 0.1]];
        let lp = DMatrix::from_fn(3, 4, |i, j| {
            let r = &rows[i];
            let z = r.iter().map(|v| v.exp()).sum::<f64>().ln();
            r[j] - z
        });
        let w = DVector::from_vec(vec![0.5, 0.5, 0.0]);
        let p = CondLogProb::new(lp, w).unwrap();
        let piv = PivotConfig { x0: 2, x_llv: vec![0, 1], y0: 0, y_llv: vec![0, 1, 2], excluded_label: 3 };
        let s = psi_terms(&p, &piv).unwrap();
        assert_eq!(s.labels, vec![1, 2]);
        assert!((s.psi_x[0] - (1.1f64 - 0.3).abs() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_log_ratio_flags_violation() {
        let f = DMatrix::from_fn(4, 2, |i, _| i as f64);
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let mt = ModelTable::new(f, g).unwrap();
        let p = cond_log_probs(&mt, &moments::uniform(4)).unwrap();
        let piv = PivotConfig::new(0, vec![1, 2], 0, 3, 4);
        let s = psi_terms(&p, &piv).unwrap();
        assert_eq!(s.psi_x[0], 0.0);
        assert!(!s.violations.is_empty());
        assert!(matches!(d_llv(&p, &p, &piv, DEFAULT_LAMBDA), Err(Error::Assumption(_))));
    }

    #[test]
    fn identical_distributions_have_zero_llv() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, p) = random_cond(&mut rng, 10, 5, 2);
        let piv = PivotConfig::new(0, vec![3, 7], 1, 4, 5);
        let r = d_llv(&p, &p, &piv, DEFAULT_LAMBDA).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn lambda_must_be_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, p) = random_cond(&mut rng, 10, 5, 2);
        let piv = PivotConfig::new(0, vec![3, 7], 1, 4, 5);
        assert!(d_llv(&p, &p, &piv, 0.0).is_err());
    }

    #[test]
    fn three_labels_score_six_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (ma, p) = random_cond(&mut rng, 12, 3, 1);
        let (mb, q) = random_cond(&mut rng, 12, 3, 1);
        // brute force over the six ordered pairs
        let mut best = (f64::INFINITY, 0, 0);
        let mut count = 0;
        for y0 in 0..3 {
            for ex in 0..3 {
                if y0 == ex {
                    continue;
                }
                count += 1;
                let piv = PivotConfig::new(0, vec![1], y0, ex, 3);
                let t1 = d_llv(&p, &q, &piv, DEFAULT_LAMBDA).unwrap().t1;
                if t1 < best.0 {
                    best = (t1, y0, ex);
                }
            }
        }
        assert_eq!(count, 6);
        let sel = select_pivots(&p, &q, 1, Some((&ma, &mb)), &PivotSearch::default()).unwrap();
        assert_eq!((sel.y0, sel.excluded_label), (best.1, best.2));
    }

    #[test]
    fn pivot_search_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (ma, p) = random_cond(&mut rng, 30, 5, 2);
        let (mb, q) = random_cond(&mut rng, 30, 5, 2);
        let o = PivotSearch { seed: 11, ..Default::default() };
        let a = select_pivots(&p, &q, 2, Some((&ma, &mb)), &o).unwrap();
        let b = select_pivots(&p, &q, 2, Some((&ma, &mb)), &o).unwrap();
        assert_eq!(a, b);
        a.validate(30, 5, 2).unwrap();
    }
}
