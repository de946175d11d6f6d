//! Similarity of two joint samples of representations: standardization,
//! cross-covariance, PLS-SVD (`m_SVD`, `d_SVD`), CCA and affine-fit residuals.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::moments;
use crate::{Error, Result};

/// `s` joint samples of an `M`-dimensional variable, one per row, with weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    rows: DMatrix<f64>,
    weights: DVector<f64>,
}

impl SampleMatrix {
    pub fn new(rows: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        if rows.nrows() < 2 {
            return Err(Error::Shape("need at least two samples".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample matrix".into()));
        }
        moments::check_weights(&weights, rows.nrows())?;
        Ok(Self { rows, weights })
    }

    pub fn uniform(rows: DMatrix<f64>) -> Result<Self> {
        let w = moments::uniform(rows.nrows());
        Self::new(rows, w)
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn n_samples(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    fn means(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |c, _| moments::mean(self.rows.column(c).iter().copied(), self.weights.as_slice()))
    }

    fn centered(&self) -> DMatrix<f64> {
        let mu = self.means();
        let mut r = self.rows.clone();
        for c in 0..r.ncols() {
            r.column_mut(c).add_scalar_mut(-mu[c]);
        }
        r
    }

    fn check_joint(&self, other: &Self) -> Result<()> {
        if self.n_samples() != other.n_samples() {
            return Err(Error::Shape(format!("{} samples vs {} samples", self.n_samples(), other.n_samples())));
        }
        if self.weights != other.weights {
            return Err(Error::Weights("joint samples must share weights".into()));
        }
        Ok(())
    }
}

/// Each column shifted and scaled to weighted mean 0 and variance 1.
pub fn standardize(z: &SampleMatrix) -> Result<SampleMatrix> {
    let mut r = z.centered();
    let w = z.weights.as_slice();
    for c in 0..r.ncols() {
        let col: Vec<f64> = r.column(c).iter().copied().collect();
        let v = moments::var(&col, w);
        let scale = z.rows.column(c).amax();
        if !(v > 0.0) || v.sqrt() <= 1e-12 * scale {
            return Err(Error::ZeroVariance(c));
        }
        r.column_mut(c).scale_mut(1.0 / v.sqrt());
    }
    Ok(SampleMatrix { rows: r, weights: z.weights.clone() })
}

/// Weighted population cross-covariance `Σ_zw` (`dim(z) × dim(w)`).
pub fn cross_covariance(z: &SampleMatrix, w: &SampleMatrix) -> Result<DMatrix<f64>> {
    z.check_joint(w)?;
    let zc = z.centered();
    let wc = w.centered();
    let mut s = DMatrix::zeros(z.dim(), w.dim());
    for i in 0..z.n_samples() {
        let wi = z.weights[i];
        for a in 0..z.dim() {
            let za = wi * zc[(i, a)];
            for b in 0..w.dim() {
                s[(a, b)] += za * wc[(i, b)];
            }
        }
    }
    Ok(s)
}

/// Singular triples sorted by nonincreasing value; `Σ = U diag(σ) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub singular_values: DVector<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.left * DMatrix::from_diagonal(&self.singular_values) * self.right.transpose()
    }

    fn normalize_signs(&mut self) {
        for c in 0..self.left.ncols() {
            if sign_flip_needed(self.left.column(c).iter().copied()) {
                self.left.column_mut(c).neg_mut();
                self.right.column_mut(c).neg_mut();
            }
        }
    }
}

/// True when the largest-magnitude entry (first on ties) is negative.
fn sign_flip_needed(v: impl Iterator<Item = f64>) -> bool {
    let mut best = 0.0f64;
    for x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best < 0.0
}

/// One-sided Jacobi SVD of a square matrix: columns of `a·V` are orthogonalized
/// by plane rotations. Returns unsorted `(U·diag(σ), V)`.
fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let mut u = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut u, &mut v] {
                    for r in 0..m.nrows() {
                        let x = m[(r, p)];
                        let y = m[(r, q)];
                        m[(r, p)] = c * x - s * y;
                        m[(r, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (u, v)
}

/// Leading singular triple of `c` from the Jacobi iteration.
fn leading_triple(c: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let (us, v) = jacobi_svd(c);
    let mut best = 0;
    let mut best_norm = -1.0;
    for j in 0..us.ncols() {
        let nrm = us.column(j).norm();
        if nrm > best_norm {
            best_norm = nrm;
            best = j;
        }
    }
    let u = if best_norm > 0.0 { us.column(best) / best_norm } else { us.column(best).into_owned() };
    (best_norm.max(0.0), u, v.column(best).into_owned())
}

/// Unit vector orthogonal to `basis`, taken from the first standard axis that survives Gram–Schmidt.
fn complete_basis(basis: &[DVector<f64>], n: usize) -> DVector<f64> {
    let mut best: Option<DVector<f64>> = None;
    for e in 0..n {
        let mut v = DVector::zeros(n);
        v[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let d = b.dot(&v);
                v -= b * d;
            }
        }
        let nrm = v.norm();
        if best.as_ref().is_none_or(|b| nrm > b.norm() + 1e-12) {
            best = Some(v);
        }
        if nrm > 0.5 {
            break;
        }
    }
    let v = best.expect("n > 0");
    let nrm = v.norm();
    v / nrm
}

/// SVD by iterative deflation: extract the leading pair of `C^(r)`, subtract
/// `σ u vᵀ`, repeat `M` times. Each pair is oriented so its covariance is
/// nonnegative and the largest entry of `u` is positive.
pub fn pls_svd(sigma: &DMatrix<f64>) -> SvdResult {
    let m = sigma.nrows();
    assert_eq!(m, sigma.ncols(), "pls_svd expects a square matrix");
    let scale = sigma.amax().max(f64::MIN_POSITIVE);
    let mut c = sigma.clone();
    let mut us: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut vs: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut sv = Vec::with_capacity(m);
    for _ in 0..m {
        let (s, u, v) = leading_triple(&c);
        let (s, u, v) = if s <= 1e-13 * scale {
            let u = complete_basis(&us, m);
            let v = complete_basis(&vs, m);
            let s = (u.transpose() * sigma * &v)[(0, 0)].max(0.0);
            (s, u, v)
        } else {
            (s, u, v)
        };
        c -= &u * v.transpose() * s;
        us.push(u);
        vs.push(v);
        sv.push(s);
    }
    let mut r = SvdResult {
        left: DMatrix::from_columns(&us),
        right: DMatrix::from_columns(&vs),
        singular_values: DVector::from_vec(sv),
    };
    r.normalize_signs();
    r
}

/// Full SVD from the linear-algebra backend, sorted and sign-normalized like [`pls_svd`].
pub fn direct_svd(sigma: &DMatrix<f64>) -> SvdResult {
    let svd = sigma.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let left = DMatrix::from_columns(&order.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
    let right = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    let singular_values = DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));
    let mut r = SvdResult { left, right, singular_values };
    r.normalize_signs();
    r
}

/// Cross-covariance of the standardized samples.
pub fn standardized_cross_covariance(z: &SampleMatrix, w: &SampleMatrix) -> Result<DMatrix<f64>> {
    z.check_joint(w)?;
    if z.dim() != w.dim() {
        return Err(Error::Shape(format!("dimensions {} and {} differ", z.dim(), w.dim())));
    }
    cross_covariance(&standardize(z)?, &standardize(w)?)
}

/// Mean singular value of the standardized cross-covariance.
pub fn m_svd(z: &SampleMatrix, w: &SampleMatrix) -> Result<f64> {
    let s = standardized_cross_covariance(z, w)?;
    Ok(pls_svd(&s).singular_values.mean())
}

pub fn d_svd(z: &SampleMatrix, w: &SampleMatrix) -> Result<f64> {
    Ok((1.0 - m_svd(z, w)?).max(0.0))
}

/// `U Vᵀ` from the PLS-SVD, the orthonormal map that best aligns `w′` with `z′`.
pub fn orthogonal_alignment(z: &SampleMatrix, w: &SampleMatrix) -> Result<DMatrix<f64>> {
    let s = standardized_cross_covariance(z, w)?;
    let r = direct_svd(&s);
    Ok(&r.left * r.right.transpose())
}

fn inv_sqrt_psd(s: &DMatrix<f64>, which: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(s.clone());
    let mx = eig.eigenvalues.amax();
    let mn = eig.eigenvalues.min();
    if !(mn > 1e-12 * mx) {
        return Err(Error::Singular { which: which.into(), cond: if mn > 0.0 { mx / mn } else { f64::INFINITY } });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Mean canonical correlation, the mean singular value of `Σzz^{-1/2} Σzw Σww^{-1/2}`.
pub fn m_cca(z: &SampleMatrix, w: &SampleMatrix) -> Result<f64> {
    z.check_joint(w)?;
    let szz = cross_covariance(z, z)?;
    let sww = cross_covariance(w, w)?;
    let szw = cross_covariance(z, w)?;
    let k = inv_sqrt_psd(&szz, "within-set covariance of z")? * szw * inv_sqrt_psd(&sww, "within-set covariance of w")?;
    let s = k.singular_values();
    let r = s.len().min(z.dim()).min(w.dim());
    Ok(s.iter().take(r).sum::<f64>() / r as f64)
}

/// Per-sample residual norms of the weighted least-squares fit `w ≈ B z + c`.
pub fn linear_fit_residuals(z: &SampleMatrix, w: &SampleMatrix) -> Result<DVector<f64>> {
    z.check_joint(w)?;
    let s = z.n_samples();
    let d = z.dim();
    if s <= d {
        return Err(Error::Shape(format!("need more than {d} samples for an affine fit")));
    }
    let sw = z.weights.map(|v| v.sqrt());
    let mut design = DMatrix::zeros(s, d + 1);
    for i in 0..s {
        for c in 0..d {
            design[(i, c)] = z.rows[(i, c)] * sw[i];
        }
        design[(i, d)] = sw[i];
    }
    let mut target = w.rows.clone();
    for i in 0..s {
        target.row_mut(i).scale_mut(sw[i]);
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Singular { which: "affine design matrix".into(), cond: smax / smin });
    }
    let coef = svd.solve(&target, 0.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut aug = DMatrix::zeros(s, d + 1);
    for i in 0..s {
        for c in 0..d {
            aug[(i, c)] = z.rows[(i, c)];
        }
        aug[(i, d)] = 1.0;
    }
    let resid = &w.rows - aug * coef;
    Ok(DVector::from_fn(s, |i, _| resid.row(i).norm()))
}

/// Everything the representational side reports for one pair of samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub m_svd: f64,
    pub d_svd: f64,
    pub singular_values: Vec<f64>,
    pub m_cca: Option<f64>,
    pub n_samples: usize,
}

pub fn similarity(z: &SampleMatrix, w: &SampleMatrix) -> Result<SimilarityReport> {
    let s = standardized_cross_covariance(z, w)?;
    let sv = direct_svd(&s).singular_values;
    let m = sv.mean();
    Ok(SimilarityReport {
        m_svd: m,
        d_svd: (1.0 - m).max(0.0),
        singular_values: sv.iter().copied().collect(),
        m_cca: m_cca(z, w).ok(),
        n_samples: z.n_samples(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn two_point_column_standardizes_to_unit() {
        let z = SampleMatrix::uniform(DMatrix::from_row_slice(2, 1, &[0.0, 2.0])).unwrap();
        let s = standardize(&z).unwrap();
        assert!((s.rows()[(0, 0)] + 1.0).abs() < 1e-15);
        assert!((s.rows()[(1, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standardize_is_idempotent_and_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = SampleMatrix::uniform(gauss(&mut rng, 50, 3)).unwrap();
        let s = standardize(&z).unwrap();
        let s2 = standardize(&s).unwrap();
        assert!((s.rows() - s2.rows()).abs().max() < 1e-12);
        let shifted = SampleMatrix::uniform(z.rows().map(|v| 3.0 * v - 7.0)).unwrap();
        assert!((standardize(&shifted).unwrap().rows() - s.rows()).abs().max() < 1e-12);
    }

    #[test]
    fn constant_column_is_an_error() {
        let mut rows = DMatrix::from_element(5, 2, 1.0);
        rows[(0, 0)] = 2.0;
        let z = SampleMatrix::uniform(rows).unwrap();
        assert!(matches!(standardize(&z), Err(Error::ZeroVariance(1))));
    }

    #[test]
    fn self_cross_covariance_is_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = standardize(&SampleMatrix::uniform(gauss(&mut rng, 100, 3)).unwrap()).unwrap();
        let s = cross_covariance(&z, &z).unwrap();
        for i in 0..3 {
            assert!((s[(i, i)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shuffled_columns_are_nearly_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = 20000;
        let z = SampleMatrix::uniform(gauss(&mut rng, s, 2)).unwrap();
        let w = SampleMatrix::uniform(gauss(&mut rng, s, 2)).unwrap();
        let c = standardized_cross_covariance(&z, &w).unwrap();
        assert!(c.amax() < 3.0 / (s as f64).sqrt());
    }

    #[test]
    fn identity_and_diagonal_svd() {
        let r = pls_svd(&DMatrix::identity(3, 3));
        assert!(r.singular_values.iter().all(|s| (s - 1.0).abs() < 1e-14));
        let r = pls_svd(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0])));
        assert!((r.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((r.singular_values[1] - 1.0).abs() < 1e-14);
        assert!((r.left[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((r.right[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn deflation_matches_backend() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = gauss(&mut rng, 5, 5);
            let p = pls_svd(&a);
            let d = direct_svd(&a);
            assert!((&p.singular_values - &d.singular_values).amax() < 1e-9);
            assert!((p.reconstruct() - &a).amax() < 1e-8);
            let i = DMatrix::<f64>::identity(5, 5);
            assert!((p.left.transpose() * &p.left - &i).amax() < 1e-9);
            assert!((p.right.transpose() * &p.right - &i).amax() < 1e-9);
        }
    }

    #[test]
    fn rank_deficient_input_completes_basis() {
        let u = DVector::from_vec(vec![1.0, 2.0, 2.0]) / 3.0;
        let v = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        let a = &u * v.transpose() * 2.0;
        let r = pls_svd(&a);
        assert!((r.singular_values[0] - 2.0).abs() < 1e-12);
        assert!(r.singular_values[1].abs() < 1e-12);
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((r.left.transpose() * &r.left - &i).amax() < 1e-9);
        assert!((r.reconstruct() - a).amax() < 1e-12);
        let z = pls_svd(&DMatrix::zeros(2, 2));
        assert_eq!(z.singular_values.sum(), 0.0);
    }

    #[test]
    fn msvd_of_self_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = SampleMatrix::uniform(gauss(&mut rng, 40, 3)).unwrap();
        assert!((m_svd(&z, &z).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cca_invariant_to_invertible_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = SampleMatrix::uniform(gauss(&mut rng, 200, 2)).unwrap();
        let a = gauss(&mut rng, 2, 2) + DMatrix::identity(2, 2) * 2.0;
        let w = SampleMatrix::uniform(z.rows() * a.transpose() + DMatrix::from_element(200, 2, 4.0)).unwrap();
        assert!((m_cca(&z, &w).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cca_of_independent_samples_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = SampleMatrix::uniform(gauss(&mut rng, 10000, 2)).unwrap();
        let w = SampleMatrix::uniform(gauss(&mut rng, 10000, 2)).unwrap();
        assert!(m_cca(&z, &w).unwrap() < 0.1);
    }

    #[test]
    fn affine_images_have_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = SampleMatrix::uniform(gauss(&mut rng, 30, 2)).unwrap();
        let w = SampleMatrix::uniform(z.rows().map(|v| 2.0 * v + 1.0)).unwrap();
        assert!(linear_fit_residuals(&z, &w).unwrap().amax() < 1e-10);
    }

    #[test]
    fn single_corrupted_sample_stands_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = SampleMatrix::uniform(gauss(&mut rng, 200, 2)).unwrap();
        let mut rows = z.rows().clone();
        rows[(17, 0)] += 25.0;
        let w = SampleMatrix::uniform(rows).unwrap();
        let r = linear_fit_residuals(&z, &w).unwrap();
        let (imax, _) = r.argmax();
        assert_eq!(imax, 17);
        let others = r.iter().enumerate().filter(|(i, _)| *i != 17).map(|(_, v)| *v).fold(0.0, f64::max);
        assert!(r[17] > 10.0 * others);
    }

    #[test]
    fn too_few_samples_for_fit() {
        let z = SampleMatrix::uniform(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!(linear_fit_residuals(&z, &z).is_err());
    }
}
