//! Model pairs whose conditional distributions converge while their
//! embeddings stay unrelated by any linear map.
//!
//! Two families are provided. The *theorem* family places unembeddings on
//! `±ρe_i`, swaps two of them in the second model and rotates the affected
//! embeddings so every input keeps its top label and its angle to it; two
//! truncated sequences of embeddings meeting at a common limit make the map
//! between the two embedding sets discontinuous. Sequence points carry
//! geometrically decaying input weight. The *circle* family spreads
//! `k` unembeddings evenly on a circle of radius `ρ`, samples one embedding
//! cluster per label, and permutes clusters together with unembeddings.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bound_lab;
use crate::metrics_distributional::{d_kl, d_llv, select_pivots, PivotSearch};
use crate::metrics_representational::{m_cca, SampleMatrix};
use crate::model_core::{ModelPair, ModelTable, PivotConfig};
use crate::moments;
use crate::{Error, Result};

/// Default unembedding norms.
pub const DEFAULT_RHOS: [f64; 6] = [3.0, 6.0, 9.0, 12.0, 15.0, 18.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationKind {
    /// Swap of the unembeddings `−ρe₁` and `−ρe₂` (`k = M+2`).
    TheoremKM2,
    /// `−ρe₁` replaced by `−ρe₂` (`k = M+1`); labels are not permuted.
    TheoremKM1,
    /// Two non-adjacent circle clusters exchanged.
    CircleSwap,
    /// Circle clusters mapped by `j ↦ a·j mod k`.
    CircleMultiplicative,
    Custom,
}

/// Permutation of label indices: label `j` of the second model takes the
/// unembedding (and cluster position) of label `pi[j]` of the first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSpec {
    pub pi: Vec<usize>,
    pub kind: PermutationKind,
}

impl PermutationSpec {
    pub fn new(pi: Vec<usize>, kind: PermutationKind) -> Result<Self> {
        let mut seen = vec![false; pi.len()];
        for &j in &pi {
            if j >= pi.len() || seen[j] {
                return Err(Error::InvalidArgument(format!("{pi:?} is not a permutation")));
            }
            seen[j] = true;
        }
        Ok(Self { pi, kind })
    }

    pub fn identity(k: usize) -> Self {
        Self { pi: (0..k).collect(), kind: PermutationKind::Custom }
    }

    /// Exchanges clusters 0 and 2.
    pub fn circle_swap(k: usize) -> Result<Self> {
        if k < 4 {
            return Err(Error::InvalidArgument("a non-adjacent swap needs k ≥ 4".into()));
        }
        let mut pi: Vec<usize> = (0..k).collect();
        pi.swap(0, 2);
        Self::new(pi, PermutationKind::CircleSwap)
    }

    /// `j ↦ a·j mod k`; a bijection when `gcd(a, k) = 1`.
    pub fn circle_multiplicative(k: usize, a: usize) -> Result<Self> {
        Self::new((0..k).map(|j| (a * j) % k).collect(), PermutationKind::CircleMultiplicative)
    }

    pub fn theorem_k_m2(dim: usize) -> Self {
        let mut pi: Vec<usize> = (0..dim + 2).collect();
        pi.swap(dim, dim + 1);
        Self { pi, kind: PermutationKind::TheoremKM2 }
    }

    pub fn theorem_k_m1(dim: usize) -> Self {
        Self { pi: (0..dim + 1).collect(), kind: PermutationKind::TheoremKM1 }
    }

    pub fn is_identity(&self) -> bool {
        self.pi.iter().enumerate().all(|(i, &j)| i == j)
    }
}

/// Two constructed models on the same input grid.
#[derive(Debug, Clone)]
pub struct ConstructedPair {
    pub first: ModelTable,
    pub second: ModelTable,
    /// Top label of every input (the same in both models).
    pub labels: Vec<usize>,
    pub permutation: PermutationSpec,
    /// Input measure `p_D`.
    pub weights: DVector<f64>,
}

impl ConstructedPair {
    pub fn to_model_pair(&self) -> Result<ModelPair> {
        ModelPair::new(self.first.clone(), self.second.clone(), &self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremSpec {
    pub dim: usize,
    pub k: usize,
    /// Points kept from each of the two convergent sequences.
    pub truncation: usize,
    /// Points per label cluster.
    pub cluster_points: usize,
    /// Input weight of the `n`-th sequence point is proportional to `decay^n`
    /// (cluster points have weight 1 before normalization).
    pub sequence_decay: f64,
}

impl Default for TheoremSpec {
    fn default() -> Self {
        Self { dim: 2, k: 4, truncation: 50, cluster_points: 12, sequence_decay: 0.5 }
    }
}

fn rotate_first_two(v: &mut [f64], angle: f64) {
    let (s, c) = angle.sin_cos();
    let (x, y) = (v[0], v[1]);
    v[0] = c * x - s * y;
    v[1] = s * x + c * y;
}

/// Unit direction of label `j` in the theorem family, and an orthogonal axis.
fn theorem_direction(dim: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    if j < dim {
        u[j] = 1.0;
        v[if j == 0 { 1 } else { 0 }] = 1.0;
    } else {
        u[j - dim] = -1.0;
        v[if j == dim { 1 } else { 0 }] = 1.0;
    }
    (u, v)
}

/// The theorem pair at unembedding norm `rho`.
pub fn build_theorem_pair(spec: &TheoremSpec, rho: f64) -> Result<ConstructedPair> {
    let TheoremSpec { dim, k, truncation, cluster_points, sequence_decay } = *spec;
    if dim < 2 {
        return Err(Error::Construction("the construction needs M ≥ 2".into()));
    }
    if k != dim + 1 && k != dim + 2 {
        return Err(Error::Construction(format!(
            "k = {k} is not supported; use k = M+1 or k = M+2 (extra labels would need to sit more than π/2 away from e₂, −e₁ and −e₂)"
        )));
    }
    if !(rho > 0.0) {
        return Err(Error::Construction("rho must be positive".into()));
    }
    if truncation == 0 || cluster_points == 0 {
        return Err(Error::Construction("truncation and cluster size must be positive".into()));
    }
    if !(sequence_decay > 0.0 && sequence_decay <= 1.0) {
        return Err(Error::Construction("sequence decay must lie in (0, 1]".into()));
    }
    let mut g = DMatrix::zeros(k, dim);
    for j in 0..k {
        let (u, _) = theorem_direction(dim, j);
        for c in 0..dim {
            g[(j, c)] = rho * u[c];
        }
    }
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut raw_weights: Vec<f64> = Vec::new();
    let planar = |angle: f64| {
        let mut v = vec![0.0; dim];
        v[0] = angle.cos();
        v[1] = angle.sin();
        v
    };
    for n in 1..=truncation {
        points.push(planar(PI - PI / 4.0 * (1.0 - 1.0 / n as f64)));
        raw_weights.push(sequence_decay.powi(n as i32));
    }
    for m in 1..=truncation {
        points.push(planar(3.0 * PI / 4.0 - PI / (4.0 * m as f64)));
        raw_weights.push(sequence_decay.powi(m as i32));
    }
    for j in 0..k {
        let (u, v) = theorem_direction(dim, j);
        for i in 0..cluster_points {
            let t = if cluster_points == 1 { 0.5 } else { i as f64 / (cluster_points - 1) as f64 };
            let phi = (t - 0.5) * PI / 6.0;
            let r = 0.75 + 0.5 * ((i * 7 + j * 3) % 11) as f64 / 10.0;
            points.push((0..dim).map(|c| r * (phi.cos() * u[c] + phi.sin() * v[c])).collect());
            raw_weights.push(1.0);
        }
    }
    let n = points.len();
    let f = DMatrix::from_fn(n, dim, |i, c| points[i][c]);
    let first = ModelTable::new(f.clone(), g.clone())?;
    let labels = first.argmax_labels();

    let (permutation, g2) = if k == dim + 2 {
        let p = PermutationSpec::theorem_k_m2(dim);
        let mut g2 = g.clone();
        g2.swap_rows(dim, dim + 1);
        (p, g2)
    } else {
        let mut g2 = g.clone();
        g2.row_mut(dim).fill(0.0);
        g2[(dim, 1)] = -rho;
        (PermutationSpec::theorem_k_m1(dim), g2)
    };
    let mut f2 = f.clone();
    for (i, &y) in labels.iter().enumerate() {
        let angle = if y == dim {
            PI / 2.0
        } else if y == dim + 1 {
            -PI / 2.0
        } else {
            continue;
        };
        let mut row: Vec<f64> = f2.row(i).iter().copied().collect();
        rotate_first_two(&mut row, angle);
        for c in 0..dim {
            f2[(i, c)] = row[c];
        }
    }
    let second = ModelTable::new(f2, g2)?;
    let total: f64 = raw_weights.iter().sum();
    let weights = DVector::from_iterator(n, raw_weights.iter().map(|w| w / total));
    Ok(ConstructedPair { first, second, labels, permutation, weights })
}

/// Sampling recipe for the circle family (`M = 2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleSpec {
    pub k: usize,
    pub points_per_label: usize,
    /// Embedding angles are uniform within `± half_width` of their label's unembedding.
    pub half_width: f64,
    /// Embedding radii are log-normal with this median ...
    pub radius_median: f64,
    /// ... and this log-scale spread.
    pub radius_log_sigma: f64,
    /// Draw offsets in mirrored pairs `(δ, r)`, `(−δ, r)`.
    pub antithetic: bool,
    pub permutation: PermutationSpec,
    pub seed: u64,
}

impl CircleSpec {
    /// Clusters spread up to `π/(6k)` short of the angular midpoints, radii near 1,
    /// and a swap of two non-adjacent clusters.
    pub fn new(k: usize, points_per_label: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            k,
            points_per_label,
            half_width: PI / k as f64 - PI / (6.0 * k as f64),
            radius_median: 1.0,
            radius_log_sigma: 0.1,
            antithetic: false,
            permutation: PermutationSpec::circle_swap(k)?,
            seed,
        })
    }

    /// Preset used for the ρ-sweep table: seven labels, clusters mapped by
    /// `j ↦ 2j mod 7`, tight clusters at radius about 2.
    ///
    /// Both the rotational and the reflected part of the cross-covariance
    /// between the two embedding sets vanish for this permutation, so the
    /// embeddings are close to uncorrelated.
    pub fn table1() -> Self {
        let k = 7;
        Self {
            k,
            points_per_label: 140,
            half_width: 0.1 * PI / k as f64,
            radius_median: 2.0,
            radius_log_sigma: 0.1,
            antithetic: true,
            permutation: PermutationSpec::circle_multiplicative(k, 2).expect("2 is a unit mod 7"),
            seed: 0,
        }
    }
}

/// Label angles `2πj/k`.
pub fn circle_angles(k: usize) -> Vec<f64> {
    (0..k).map(|j| 2.0 * PI * j as f64 / k as f64).collect()
}

/// The circle pair at unembedding norm `rho`.
pub fn build_circle_pair(spec: &CircleSpec, rho: f64) -> Result<ConstructedPair> {
    let k = spec.k;
    if k < 3 {
        return Err(Error::Construction("the circle construction needs k ≥ 3".into()));
    }
    if spec.permutation.pi.len() != k {
        return Err(Error::Construction("permutation length differs from k".into()));
    }
    if !(spec.half_width >= 0.0 && spec.half_width < PI / k as f64) {
        return Err(Error::Construction("half width must lie in [0, π/k)".into()));
    }
    if spec.points_per_label == 0 || (spec.antithetic && spec.points_per_label % 2 == 1) {
        return Err(Error::Construction("points per label must be positive (and even when antithetic)".into()));
    }
    if !(rho > 0.0) || !(spec.radius_median > 0.0) {
        return Err(Error::Construction("rho and radius must be positive".into()));
    }
    let theta = circle_angles(k);
    let pi = &spec.permutation.pi;
    let g = DMatrix::from_fn(k, 2, |j, c| rho * if c == 0 { theta[j].cos() } else { theta[j].sin() });
    let g2 = DMatrix::from_fn(k, 2, |j, c| g[(pi[j], c)]);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut f = Vec::new();
    let mut f2 = Vec::new();
    let mut labels = Vec::new();
    for j in 0..k {
        let mut offsets = Vec::with_capacity(spec.points_per_label);
        let draws = if spec.antithetic { spec.points_per_label / 2 } else { spec.points_per_label };
        for _ in 0..draws {
            let d = if spec.half_width > 0.0 { rng.random_range(-spec.half_width..spec.half_width) } else { 0.0 };
            let z: f64 = rng.sample(StandardNormal);
            let r = spec.radius_median * (spec.radius_log_sigma * z).exp();
            offsets.push((d, r));
            if spec.antithetic {
                offsets.push((-d, r));
            }
        }
        for (d, r) in offsets {
            let a = theta[j] + d;
            let a2 = theta[pi[j]] + d;
            f.push([r * a.cos(), r * a.sin()]);
            f2.push([r * a2.cos(), r * a2.sin()]);
            labels.push(j);
        }
    }
    let n = f.len();
    let first = ModelTable::new(DMatrix::from_fn(n, 2, |i, c| f[i][c]), g)?;
    let second = ModelTable::new(DMatrix::from_fn(n, 2, |i, c| f2[i][c]), g2)?;
    Ok(ConstructedPair { first, second, labels, permutation: spec.permutation.clone(), weights: moments::uniform(n) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyBase {
    Theorem(TheoremSpec),
    Circle(CircleSpec),
}

/// A construction evaluated at several unembedding norms with fixed embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoFamily {
    pub rho_values: Vec<f64>,
    pub base: FamilyBase,
}

impl RhoFamily {
    pub fn pair(&self, rho: f64) -> Result<ConstructedPair> {
        match &self.base {
            FamilyBase::Theorem(s) => build_theorem_pair(s, rho),
            FamilyBase::Circle(s) => build_circle_pair(s, rho),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoRecord {
    pub rho: f64,
    pub d_kl_pq: f64,
    pub d_kl_qp: f64,
    pub d_llv: f64,
    pub m_cca: f64,
    pub max_d_svd: f64,
}

/// One record per ρ. Pivots are chosen once on the smallest-ρ pair and reused.
pub fn rho_sweep(family: &RhoFamily, lambda: f64, search: &PivotSearch) -> Result<(Vec<RhoRecord>, PivotConfig)> {
    if family.rho_values.is_empty() {
        return Err(Error::InvalidArgument("empty rho list".into()));
    }
    let smallest = family.rho_values.iter().copied().fold(f64::INFINITY, f64::min);
    let base = family.pair(smallest)?.to_model_pair()?;
    let pivots = select_pivots(&base.p, &base.q, base.dim(), Some((&base.a, &base.b)), search)?;
    let mut out = Vec::with_capacity(family.rho_values.len());
    for &rho in &family.rho_values {
        let pair = family.pair(rho)?.to_model_pair()?;
        let z = SampleMatrix::new(pair.a.embeddings().clone(), pair.weights().clone())?;
        let w = SampleMatrix::new(pair.b.embeddings().clone(), pair.weights().clone())?;
        out.push(RhoRecord {
            rho,
            d_kl_pq: d_kl(&pair.p, &pair.q)?,
            d_kl_qp: d_kl(&pair.q, &pair.p)?,
            d_llv: d_llv(&pair.p, &pair.q, &pivots, lambda)?.value,
            m_cca: m_cca(&z, &w)?,
            max_d_svd: bound_lab::max_d_svd(&pair, &pivots)?.value,
        });
    }
    Ok((out, pivots))
}

/// Adds i.i.d. `N(0, σ²)` noise to every embedding entry.
pub fn perturb_embeddings(model: &ModelTable, sigma: f64, seed: u64) -> Result<ModelTable> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(model.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = model.embeddings().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
    model.with_embeddings(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_core::nll;

    fn cosines(m: &ModelTable, i: usize) -> Vec<f64> {
        let f = m.embeddings().row(i);
        (0..m.n_labels())
            .map(|j| {
                let g = m.unembeddings().row(j);
                f.dot(&g) / (f.norm() * g.norm())
            })
            .collect()
    }

    fn unique_argmax(v: &[f64]) -> Option<usize> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
        (v[idx[0]] > v[idx[1]]).then_some(idx[0])
    }

    #[test]
    fn theorem_pair_conditions_hold() {
        for (dim, k) in [(2, 4), (2, 3), (3, 5), (3, 4)] {
            let spec = TheoremSpec { dim, k, ..Default::default() };
            let pair = build_theorem_pair(&spec, 3.0).unwrap();
            for (m, name) in [(&pair.first, "first"), (&pair.second, "second")] {
                let top = m.argmax_labels();
                for (i, &t) in top.iter().enumerate() {
                    let c = cosines(m, i);
                    let am = unique_argmax(&c).unwrap_or_else(|| panic!("{name} input {i} has a tie"));
                    assert!(c[am] > 0.0);
                    assert_eq!(am, t);
                }
                for j in 0..k {
                    assert!((m.unembeddings().row(j).norm() - 3.0).abs() < 1e-12);
                }
            }
            for i in 0..pair.first.n_inputs() {
                let a = pair.first.embeddings().row(i);
                let b = pair.second.embeddings().row(i);
                assert!((a.norm() - b.norm()).abs() < 1e-12);
                let y = pair.labels[i];
                let ca = cosines(&pair.first, i)[y];
                let cb = cosines(&pair.second, i)[y];
                assert!((ca - cb).abs() < 1e-12, "angle to the top label changed at input {i}");
                if y < dim {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn theorem_pair_rejects_unsupported_shapes() {
        assert!(build_theorem_pair(&TheoremSpec { dim: 1, k: 3, ..Default::default() }, 3.0).is_err());
        assert!(build_theorem_pair(&TheoremSpec { dim: 2, k: 5, ..Default::default() }, 3.0).is_err());
    }

    #[test]
    fn theorem_kl_decreases_in_rho() {
        let spec = TheoremSpec::default();
        let mut prev = f64::INFINITY;
        for rho in DEFAULT_RHOS {
            let p = build_theorem_pair(&spec, rho).unwrap().to_model_pair().unwrap();
            let v = d_kl(&p.p, &p.q).unwrap();
            assert!(v < prev, "rho {rho}: {v} !< {prev}");
            prev = v;
        }
    }

    #[test]
    fn theorem_nll_decreases_in_rho() {
        let spec = TheoremSpec::default();
        let mut prev = f64::INFINITY;
        for rho in DEFAULT_RHOS {
            let pair = build_theorem_pair(&spec, rho).unwrap();
            let v = nll(&pair.first, &pair.labels, &pair.weights).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn circle_identity_permutation_gives_identical_models() {
        let mut spec = CircleSpec::new(6, 10, 3).unwrap();
        spec.permutation = PermutationSpec::identity(6);
        let pair = build_circle_pair(&spec, 4.0).unwrap();
        assert_eq!(pair.first, pair.second);
    }

    #[test]
    fn circle_clusters_sit_nearest_their_label() {
        for spec in [CircleSpec::new(6, 50, 1).unwrap(), CircleSpec::table1()] {
            let pair = build_circle_pair(&spec, 5.0).unwrap();
            assert_eq!(pair.first.argmax_labels(), pair.labels);
            assert_eq!(pair.second.argmax_labels(), pair.labels);
        }
    }

    #[test]
    fn circle_embeddings_do_not_depend_on_rho() {
        let spec = CircleSpec::table1();
        let a = build_circle_pair(&spec, 3.0).unwrap();
        let b = build_circle_pair(&spec, 18.0).unwrap();
        assert_eq!(a.first.embeddings(), b.first.embeddings());
        assert_eq!(a.second.embeddings(), b.second.embeddings());
        for j in 0..spec.k {
            assert!((b.first.unembeddings().row(j).norm() - 18.0).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_diversity_for_adjacent_labels() {
        use crate::model_core::{check_diversity, DEFAULT_COND_CAP};
        let pair = build_circle_pair(&CircleSpec::new(6, 20, 0).unwrap(), 3.0).unwrap();
        // pivot label 0 with basis labels 1 and 2; inputs from clusters 0, 1, 2
        let piv = PivotConfig::new(0, vec![20, 40], 0, 5, 6);
        assert!(check_diversity(&pair.first, &piv, DEFAULT_COND_CAP).unwrap().ok);
    }

    #[test]
    fn multiplicative_permutation() {
        let p = PermutationSpec::circle_multiplicative(7, 2).unwrap();
        assert_eq!(p.pi, vec![0, 2, 4, 6, 1, 3, 5]);
        assert!(PermutationSpec::circle_multiplicative(6, 2).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let pair = build_circle_pair(&CircleSpec::new(5, 8, 0).unwrap(), 3.0).unwrap();
        assert_eq!(perturb_embeddings(&pair.first, 0.0, 9).unwrap(), pair.first);
        let a = perturb_embeddings(&pair.first, 0.1, 9).unwrap();
        let b = perturb_embeddings(&pair.first, 0.1, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.unembeddings(), pair.first.unembeddings());
    }
}
