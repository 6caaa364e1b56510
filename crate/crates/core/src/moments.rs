//! Second-moment computation, moment-gap measurement, and the small
//! matrix-analysis utilities the spectral diagnostics need.
//!
//! Data matrices are feature-major: a `d x n` matrix holds `n` samples of
//! dimension `d`, one sample per column. The uncentered second moment of a
//! sample matrix is `M = (1/n) X X^T`, and the gap between two domains is
//! measured as the squared Frobenius norm of the difference of their second
//! moments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used by [`SymmetricMatrix::new`] to accept an
/// almost-symmetric matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A `d x n` real matrix whose columns are samples.
///
/// Invariants: `d >= 1`, `n >= 1`, all entries finite. An all-zero matrix is
/// legal (sparse text data can produce empty feature rows and empty
/// documents upstream of the drop pass).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    /// Wraps a matrix after validating the invariants.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "data matrix must be at least 1x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "data matrix contains a non-finite entry".into(),
            ));
        }
        Ok(Self { values })
    }

    /// Feature dimension `d`.
    pub fn feature_count(&self) -> usize {
        self.values.nrows()
    }

    /// Sample count `n`.
    pub fn sample_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &DataMatrix) -> Result<DataMatrix> {
        if self.feature_count() != other.feature_count() {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack {}-dim samples with {}-dim samples",
                self.feature_count(),
                other.feature_count()
            )));
        }
        let mut joined = DMatrix::zeros(self.feature_count(), self.sample_count() + other.sample_count());
        joined.columns_mut(0, self.sample_count()).copy_from(&self.values);
        joined
            .columns_mut(self.sample_count(), other.sample_count())
            .copy_from(&other.values);
        DataMatrix::new(joined)
    }

    /// Copy of the columns with the given indices, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<DataMatrix> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("cannot select zero columns".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.sample_count()) {
            return Err(Error::InvalidInput(format!(
                "column index {bad} out of range for {} samples",
                self.sample_count()
            )));
        }
        Ok(DataMatrix {
            values: self.values.select_columns(indices.iter()),
        })
    }
}

/// A real `d x d` matrix that is symmetric up to
/// `SYMMETRY_TOL * (1 + max |entry|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    values: DMatrix<f64>,
}

impl SymmetricMatrix {
    /// Validates symmetry and wraps the matrix.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::InvalidInput(format!(
                "expected a square matrix, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let scale = 1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..values.nrows() {
            for j in (i + 1)..values.ncols() {
                if (values[(i, j)] - values[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    /// Forces exact symmetry by averaging with the transpose. Always
    /// succeeds on a square matrix; decompositions use this form so that
    /// identical input bits give identical spectra.
    pub fn symmetrized(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::InvalidInput(format!(
                "expected a square matrix, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let sym = (&values + values.transpose()) * 0.5;
        Ok(Self { values: sym })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Squared Frobenius norm.
    pub fn norm_squared(&self) -> f64 {
        self.values.norm_squared()
    }
}

/// Source and target samples kept in one combined matrix with a recorded
/// column split: columns `0..n_source` are the source block, the rest the
/// target block.
#[derive(Debug, Clone)]
pub struct DomainPair {
    combined: DataMatrix,
    n_source: usize,
}

impl DomainPair {
    pub fn new(source: &DataMatrix, target: &DataMatrix) -> Result<Self> {
        Ok(Self {
            combined: source.hstack(target)?,
            n_source: source.sample_count(),
        })
    }

    /// Wraps an already-combined matrix with its split point.
    pub fn from_combined(combined: DataMatrix, n_source: usize) -> Result<Self> {
        if n_source == 0 || n_source >= combined.sample_count() {
            return Err(Error::InvalidInput(format!(
                "split {n_source} must satisfy 1 <= split < {}",
                combined.sample_count()
            )));
        }
        Ok(Self { combined, n_source })
    }

    pub fn combined(&self) -> &DataMatrix {
        &self.combined
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }

    pub fn n_target(&self) -> usize {
        self.combined.sample_count() - self.n_source
    }

    /// Owned copy of the source block.
    pub fn source(&self) -> DataMatrix {
        DataMatrix {
            values: self.combined.values.columns(0, self.n_source).into_owned(),
        }
    }

    /// Owned copy of the target block.
    pub fn target(&self) -> DataMatrix {
        DataMatrix {
            values: self
                .combined
                .values
                .columns(self.n_source, self.n_target())
                .into_owned(),
        }
    }
}

/// Uncentered second moment `(1/n) X X^T`.
///
/// The result is positive semidefinite; it is symmetrized explicitly so the
/// [`SymmetricMatrix`] invariant holds bit-for-bit.
pub fn second_moment(x: &DataMatrix) -> SymmetricMatrix {
    let m = x.values() * x.values().transpose() / (x.sample_count() as f64);
    SymmetricMatrix::symmetrized(m).expect("product of X X^T is square")
}

/// Difference of the two domains' second moments and its squared Frobenius
/// norm, the domain-distance diagnostic.
#[derive(Debug, Clone)]
pub struct MomentGap {
    pub delta: SymmetricMatrix,
    pub distance: f64,
}

/// `delta = M_S - M_T`, `distance = ||delta||_F^2`.
pub fn moment_gap(source: &DataMatrix, target: &DataMatrix) -> Result<MomentGap> {
    if source.feature_count() != target.feature_count() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} features, target has {}",
            source.feature_count(),
            target.feature_count()
        )));
    }
    let delta_values = second_moment(source).into_values() - second_moment(target).into_values();
    let delta = SymmetricMatrix::symmetrized(delta_values)?;
    let distance = delta.norm_squared();
    Ok(MomentGap { delta, distance })
}

/// Diagonal matrix with entry `(i, i)` equal to the squared Euclidean norm
/// of feature row `i`. Off-diagonal entries are exactly zero.
pub fn row_norm_diag(x: &DataMatrix) -> SymmetricMatrix {
    let d = x.feature_count();
    let mut diag = DMatrix::zeros(d, d);
    for i in 0..d {
        diag[(i, i)] = x.values().row(i).norm_squared();
    }
    SymmetricMatrix { values: diag }
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn eigenvalues_sorted(a: &SymmetricMatrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(a.values().clone());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).expect("eigenvalues of a real symmetric matrix are finite"));
    vals
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// ascending and eigenvectors as matching columns.
pub(crate) fn symmetric_eigen_sorted(a: &SymmetricMatrix) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.values().clone());
    let d = a.dim();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .expect("eigenvalues of a real symmetric matrix are finite")
    });
    let values = DVector::from_fn(d, |k, _| eig.eigenvalues[order[k]]);
    let vectors = eig.eigenvectors.select_columns(order.iter());
    (values, vectors)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(a: &SymmetricMatrix) -> (f64, f64) {
    let vals = eigenvalues_sorted(a);
    (vals[0], *vals.last().expect("dimension is at least 1"))
}

/// Largest singular value of an arbitrary real matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let svd = a.clone().svd(false, false);
    svd.singular_values
        .iter()
        .fold(0.0f64, |m, s| m.max(*s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, d: usize, n: usize) -> DataMatrix {
        DataMatrix::new(DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, d: usize) -> SymmetricMatrix {
        let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        SymmetricMatrix::symmetrized(raw).unwrap()
    }

    #[test]
    fn rejects_empty_matrix() {
        assert!(DataMatrix::new(DMatrix::zeros(0, 3)).is_err());
        assert!(DataMatrix::new(DMatrix::zeros(3, 0)).is_err());
        assert!(DataMatrix::new(DMatrix::from_element(2, 2, f64::NAN)).is_err());
    }

    #[test]
    fn second_moment_identity() {
        let x = DataMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let m = second_moment(&x);
        assert_eq!(m.values(), &(DMatrix::identity(2, 2) * 0.5));
    }

    #[test]
    fn second_moment_single_column() {
        let x = DataMatrix::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let m = second_moment(&x);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.values(), &expected);
    }

    #[test]
    fn second_moment_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 4, 7);
        let m = second_moment(&x);
        // naive triple-loop oracle
        let (d, n) = (4, 7);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += x.values()[(i, k)] * x.values()[(j, k)];
                }
                acc /= n as f64;
                assert_abs_diff_eq!(m.values()[(i, j)], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn moment_gap_identical_domains_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 3, 5);
        let gap = moment_gap(&x, &x).unwrap();
        assert_eq!(gap.distance, 0.0);
        assert!(gap.delta.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn moment_gap_hand_computed() {
        let xs = DataMatrix::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let xt = DataMatrix::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        let gap = moment_gap(&xs, &xt).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(gap.delta.values(), &expected);
        assert_abs_diff_eq!(gap.distance, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn moment_gap_matches_scalar_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = random_matrix(&mut rng, 5, 20);
        let xt = random_matrix(&mut rng, 5, 20);
        let gap = moment_gap(&xs, &xt).unwrap();
        let ms = second_moment(&xs);
        let mt = second_moment(&xt);
        let mut dist = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let e = ms.values()[(i, j)] - mt.values()[(i, j)];
                dist += e * e;
            }
        }
        assert_abs_diff_eq!(gap.distance, dist, epsilon = 1e-12);
    }

    #[test]
    fn moment_gap_rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let xs = random_matrix(&mut rng, 3, 4);
        let xt = random_matrix(&mut rng, 4, 4);
        assert!(matches!(
            moment_gap(&xs, &xt),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn moment_gap_antisymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let xs = random_matrix(&mut rng, 4, 9);
            let xt = random_matrix(&mut rng, 4, 6);
            let fwd = moment_gap(&xs, &xt).unwrap();
            let bwd = moment_gap(&xt, &xs).unwrap();
            let sum = fwd.delta.values() + bwd.delta.values();
            assert!(sum.iter().all(|v| v.abs() <= 1e-14));
            assert_abs_diff_eq!(fwd.distance, bwd.distance, epsilon = 1e-14);
        }
    }

    #[test]
    fn row_norm_diag_identity() {
        let x = DataMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let lam = row_norm_diag(&x);
        assert_eq!(lam.values(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn row_norm_diag_zero_row() {
        let x = DataMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 2.0])).unwrap();
        let lam = row_norm_diag(&x);
        assert_eq!(lam.values()[(0, 0)], 0.0);
        assert_eq!(lam.values()[(1, 1)], 5.0);
        assert_eq!(lam.values()[(0, 1)], 0.0);
    }

    #[test]
    fn row_norm_diag_matches_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_matrix(&mut rng, 3, 5);
        let lam = row_norm_diag(&x);
        for i in 0..3 {
            let mut acc = 0.0;
            for k in 0..5 {
                acc += x.values()[(i, k)] * x.values()[(i, k)];
            }
            assert_abs_diff_eq!(lam.values()[(i, i)], acc, epsilon = 1e-12);
        }
    }

    #[test]
    fn eigen_extremes_identity() {
        let a = SymmetricMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let (lo, hi) = eigen_extremes(&a);
        assert_abs_diff_eq!(lo, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eigen_extremes_diagonal() {
        let a = SymmetricMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![
            2.0, -1.0, 5.0,
        ])))
        .unwrap();
        let (lo, hi) = eigen_extremes(&a);
        assert_abs_diff_eq!(lo, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 5.0, epsilon = 1e-12);
    }

    // Cyclic Jacobi rotations: an independent eigensolver used as the
    // oracle at tiny scale.
    fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
            if off.sqrt() < 1e-14 * (1.0 + m.norm()) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let mut rot = DMatrix::identity(n, n);
                    rot[(p, p)] = c;
                    rot[(q, q)] = c;
                    rot[(p, q)] = s;
                    rot[(q, p)] = -s;
                    m = rot.transpose() * m * rot;
                }
            }
        }
        let mut vals: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
        vals
    }

    #[test]
    fn eigen_extremes_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let a = random_symmetric(&mut rng, 6);
            let (lo, hi) = eigen_extremes(&a);
            let oracle = jacobi_eigenvalues(a.values());
            assert_abs_diff_eq!(lo, oracle[0], epsilon = 1e-8);
            assert_abs_diff_eq!(hi, oracle[5], epsilon = 1e-8);
        }
    }

    #[test]
    fn spectral_norm_zero_matrix() {
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 4)), 0.0);
    }

    #[test]
    fn spectral_norm_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -4.0]));
        assert_abs_diff_eq!(spectral_norm(&a), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_norm_matches_gram_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let gram = SymmetricMatrix::symmetrized(a.transpose() * &a).unwrap();
            let (_, hi) = eigen_extremes(&gram);
            assert_abs_diff_eq!(spectral_norm(&a), hi.max(0.0).sqrt(), epsilon = 1e-8);
        }
    }

    #[test]
    fn second_moment_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..100 {
            let d = rng.random_range(1..7);
            let n = rng.random_range(1..12);
            let x = random_matrix(&mut rng, d, n);
            let (lo, _) = eigen_extremes(&second_moment(&x));
            assert!(lo >= -1e-10, "moment matrix eigenvalue {lo} below -1e-10");
        }
    }

    #[test]
    fn second_moment_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let x = random_matrix(&mut rng, 4, 8);
            let c: f64 = rng.random_range(-3.0..3.0);
            let scaled =
                DataMatrix::new(x.values() * c).unwrap_or_else(|_| x.clone());
            let m1 = second_moment(&scaled);
            let m2 = second_moment(&x);
            let scale = m2.values().norm().max(1.0);
            let diff = (m1.values() - m2.values() * c * c).norm();
            assert!(diff <= 1e-10 * scale * (1.0 + c * c));
        }
    }

    #[test]
    fn weyl_inequality_holds_numerically() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let d = rng.random_range(2..9);
            let a = random_symmetric(&mut rng, d);
            let b = random_symmetric(&mut rng, d);
            let sum = SymmetricMatrix::symmetrized(a.values() + b.values()).unwrap();
            let la = eigenvalues_sorted(&a);
            let lb = eigenvalues_sorted(&b);
            let ls = eigenvalues_sorted(&sum);
            let (b_min, b_max) = (lb[0], lb[d - 1]);
            for k in 0..d {
                assert!(la[k] + b_min <= ls[k] + 1e-9);
                assert!(ls[k] <= la[k] + b_max + 1e-9);
            }
        }
    }

    #[test]
    fn psd_trace_monotonicity_holds_numerically() {
        // tr(A B) <= tr(A C) for PSD A and B <= C in the Loewner order.
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..50 {
            let d = rng.random_range(2..7);
            let x = random_matrix(&mut rng, d, d + 3);
            let a = second_moment(&x); // PSD
            let b = random_symmetric(&mut rng, d);
            let y = random_matrix(&mut rng, d, d + 2);
            let c = SymmetricMatrix::symmetrized(b.values() + second_moment(&y).values()).unwrap();
            let tr_ab = (a.values() * b.values()).trace();
            let tr_ac = (a.values() * c.values()).trace();
            assert!(tr_ab <= tr_ac + 1e-9);
        }
    }

    #[test]
    fn singular_value_product_bound_holds_numerically() {
        // sigma_k(A B) <= sigma_k(A) * sigma_max(B), singular values ascending.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..30 {
            let d = rng.random_range(2..7);
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let mut sa: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
            let mut sab: Vec<f64> = (&a * &b).svd(false, false).singular_values.iter().copied().collect();
            sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
            sab.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let b_max = spectral_norm(&b);
            for k in 0..d {
                assert!(sab[k] <= sa[k] * b_max + 1e-9);
            }
        }
    }

    #[test]
    fn domain_pair_round_trips_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let xs = random_matrix(&mut rng, 3, 4);
        let xt = random_matrix(&mut rng, 3, 6);
        let pair = DomainPair::new(&xs, &xt).unwrap();
        assert_eq!(pair.n_source(), 4);
        assert_eq!(pair.n_target(), 6);
        assert_eq!(pair.source().values(), xs.values());
        assert_eq!(pair.target().values(), xt.values());
    }

    #[test]
    fn all_zero_matrix_is_legal() {
        let x = DataMatrix::new(DMatrix::zeros(3, 4)).unwrap();
        let m = second_moment(&x);
        assert!(m.values().iter().all(|v| *v == 0.0));
        let lam = row_norm_diag(&x);
        assert!(lam.values().iter().all(|v| *v == 0.0));
        assert_eq!(spectral_norm(x.values()), 0.0);
    }
}
