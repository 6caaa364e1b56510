//! PCA and CORAL reference methods.
//!
//! Both are shallow linear baselines the stacked solver is compared
//! against: PCA projects onto the top principal directions of the pooled
//! source-and-target covariance; CORAL whitens the source with its own
//! regularized covariance and recolors it with the target covariance, so
//! the aligned source matches the target's second-order statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::bin_io;
use crate::error::{Error, Result};
use crate::moments::{symmetric_eigen_sorted, DataMatrix, SymmetricMatrix};

const PCA_MAGIC: &[u8; 4] = b"PCAM";
const CORAL_MAGIC: &[u8; 4] = b"CORL";
const FORMAT_VERSION: u32 = 1;

/// Mean vector and orthonormal basis of the top-k principal directions.
///
/// Basis columns are sorted by descending eigenvalue; each column's
/// largest-magnitude entry is positive so refits reproduce identical
/// signs.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn feature_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Kept eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(PCA_MAGIC)?;
        bin_io::write_u32(w, FORMAT_VERSION)?;
        bin_io::write_u32(w, self.feature_dim() as u32)?;
        bin_io::write_u32(w, self.k() as u32)?;
        for v in self.mean.iter() {
            bin_io::write_f64(w, *v)?;
        }
        for v in &self.eigenvalues {
            bin_io::write_f64(w, *v)?;
        }
        for i in 0..self.basis.nrows() {
            for j in 0..self.basis.ncols() {
                bin_io::write_f64(w, self.basis[(i, j)])?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        bin_io::expect_magic(r, PCA_MAGIC)?;
        let version = bin_io::read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse {
                line: 0,
                message: format!("unsupported PCA model version {version}"),
            });
        }
        let d = bin_io::read_u32(r)? as usize;
        let k = bin_io::read_u32(r)? as usize;
        if d == 0 || k == 0 || k > d {
            return Err(Error::Parse {
                line: 0,
                message: format!("PCA model header has d={d}, k={k}"),
            });
        }
        let mut mean = DVector::zeros(d);
        for i in 0..d {
            mean[i] = bin_io::read_f64(r)?;
        }
        let mut eigenvalues = Vec::with_capacity(k);
        for _ in 0..k {
            eigenvalues.push(bin_io::read_f64(r)?);
        }
        let mut basis = DMatrix::zeros(d, k);
        for i in 0..d {
            for j in 0..k {
                basis[(i, j)] = bin_io::read_f64(r)?;
            }
        }
        bin_io::expect_eof(r)?;
        Ok(Self {
            mean,
            basis,
            eigenvalues,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

/// Whitening and recoloring maps of a CORAL alignment, with the domain
/// means needed to apply the alignment to fresh source samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CoralModel {
    whiten: DMatrix<f64>,
    recolor: DMatrix<f64>,
    lambda: f64,
    source_mean: DVector<f64>,
    target_mean: DVector<f64>,
}

impl CoralModel {
    pub fn feature_dim(&self) -> usize {
        self.whiten.nrows()
    }

    /// Inverse square root of the regularized source covariance.
    pub fn whiten(&self) -> &DMatrix<f64> {
        &self.whiten
    }

    /// Square root of the regularized target covariance.
    pub fn recolor(&self) -> &DMatrix<f64> {
        &self.recolor
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Aligns source-domain samples: recolor . whiten . (x - source mean),
    /// re-centered at the target mean. Target samples stay untouched by
    /// convention.
    pub fn align(&self, x: &DataMatrix) -> Result<DataMatrix> {
        if x.feature_count() != self.feature_dim() {
            return Err(Error::DimensionMismatch(format!(
                "samples have {} features but the alignment was fit on {}",
                x.feature_count(),
                self.feature_dim()
            )));
        }
        let mut centered = x.values().clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.source_mean;
        }
        let mut aligned = &self.recolor * (&self.whiten * centered);
        for mut col in aligned.column_iter_mut() {
            col += &self.target_mean;
        }
        DataMatrix::new(aligned)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CORAL_MAGIC)?;
        bin_io::write_u32(w, FORMAT_VERSION)?;
        bin_io::write_u32(w, self.feature_dim() as u32)?;
        bin_io::write_f64(w, self.lambda)?;
        for v in self.source_mean.iter() {
            bin_io::write_f64(w, *v)?;
        }
        for v in self.target_mean.iter() {
            bin_io::write_f64(w, *v)?;
        }
        for m in [&self.whiten, &self.recolor] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    bin_io::write_f64(w, m[(i, j)])?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        bin_io::expect_magic(r, CORAL_MAGIC)?;
        let version = bin_io::read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse {
                line: 0,
                message: format!("unsupported CORAL model version {version}"),
            });
        }
        let d = bin_io::read_u32(r)? as usize;
        if d == 0 {
            return Err(Error::Parse {
                line: 0,
                message: "CORAL model header has d=0".into(),
            });
        }
        let lambda = bin_io::read_f64(r)?;
        let mut source_mean = DVector::zeros(d);
        for i in 0..d {
            source_mean[i] = bin_io::read_f64(r)?;
        }
        let mut target_mean = DVector::zeros(d);
        for i in 0..d {
            target_mean[i] = bin_io::read_f64(r)?;
        }
        let mut read_matrix = |r: &mut R| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] = bin_io::read_f64(r)?;
                }
            }
            Ok(m)
        };
        let whiten = read_matrix(r)?;
        let recolor = read_matrix(r)?;
        bin_io::expect_eof(r)?;
        Ok(Self {
            whiten,
            recolor,
            lambda,
            source_mean,
            target_mean,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

/// Per-feature mean across columns.
fn column_mean(x: &DataMatrix) -> DVector<f64> {
    let mut mean = DVector::zeros(x.feature_count());
    for col in x.values().column_iter() {
        mean += col;
    }
    mean / x.sample_count() as f64
}

/// Mean-centered sample covariance with 1/(n-1) normalization. Moment
/// matrices elsewhere use 1/n; the two are deliberately distinct
/// quantities. A single sample yields the zero matrix.
fn covariance(x: &DataMatrix, mean: &DVector<f64>) -> DMatrix<f64> {
    let d = x.feature_count();
    let n = x.sample_count();
    if n < 2 {
        return DMatrix::zeros(d, d);
    }
    let mut centered = x.values().clone();
    for mut col in centered.column_iter_mut() {
        col -= mean;
    }
    let cov = &centered * centered.transpose() / (n - 1) as f64;
    (&cov + cov.transpose()) * 0.5
}

/// Fits PCA on the pooled samples: mean-centered covariance
/// eigendecomposition keeping the top-k eigenvalue directions.
pub fn pca_fit(x: &DataMatrix, k: usize) -> Result<PcaModel> {
    let d = x.feature_count();
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!(
            "requested dimensionality {k} outside 1..={d}"
        )));
    }
    let mean = column_mean(x);
    let cov = SymmetricMatrix::symmetrized(covariance(x, &mean))?;
    let (values, vectors) = symmetric_eigen_sorted(&cov);

    // symmetric_eigen_sorted sorts ascending; take the top-k from the back.
    let mut basis = DMatrix::zeros(d, k);
    let mut eigenvalues = Vec::with_capacity(k);
    for j in 0..k {
        let src = d - 1 - j;
        eigenvalues.push(values[src]);
        basis.set_column(j, &vectors.column(src));
    }
    fix_column_signs(&mut basis);
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues,
    })
}

/// Flips each column so its largest-magnitude entry is positive (first
/// occurrence wins on ties).
fn fix_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut best = 0;
        for i in 1..m.nrows() {
            if m[(i, j)].abs() > m[(best, j)].abs() {
                best = i;
            }
        }
        if m[(best, j)] < 0.0 {
            for i in 0..m.nrows() {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
}

/// Projects samples onto the principal subspace: `basis^T (X - mean)`.
pub fn pca_transform(x: &DataMatrix, model: &PcaModel) -> Result<DataMatrix> {
    if x.feature_count() != model.feature_dim() {
        return Err(Error::DimensionMismatch(format!(
            "samples have {} features but the PCA basis was fit on {}",
            x.feature_count(),
            model.feature_dim()
        )));
    }
    let mut centered = x.values().clone();
    for mut col in centered.column_iter_mut() {
        col -= &model.mean;
    }
    DataMatrix::new(model.basis.transpose() * centered)
}

/// Symmetric matrix square root (or inverse square root) through the
/// eigendecomposition. `invert` takes each eigenvalue to its reciprocal
/// square root and fails on a numerically singular matrix; without
/// inversion, eigenvalues below the negativity tolerance fail and tiny
/// negatives are clamped to zero.
fn matrix_sqrt(a: &SymmetricMatrix, invert: bool) -> Result<DMatrix<f64>> {
    let (values, vectors) = symmetric_eigen_sorted(a);
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let mut roots = DVector::zeros(values.len());
    for i in 0..values.len() {
        let v = values[i];
        if invert {
            if v <= tol {
                return Err(Error::NumericalFailure {
                    reason: format!(
                        "covariance eigenvalue {v:.3e} too small to whiten; increase lambda"
                    ),
                    condition: if v > 0.0 { scale / v } else { f64::INFINITY },
                });
            }
            roots[i] = 1.0 / v.sqrt();
        } else {
            if v < -tol {
                return Err(Error::NumericalFailure {
                    reason: format!("matrix square root of a non-PSD matrix (eigenvalue {v:.3e})"),
                    condition: f64::INFINITY,
                });
            }
            roots[i] = v.max(0.0).sqrt();
        }
    }
    let scaled = &vectors * DMatrix::from_diagonal(&roots) * vectors.transpose();
    Ok((&scaled + scaled.transpose()) * 0.5)
}

/// Whitens the mean-centered source with `(C_S + lambda I)^(-1/2)`,
/// recolors with `(C_T + lambda I)^(1/2)`, and re-centers at the target
/// mean. Returns the fitted maps and the aligned source; the target is
/// returned unchanged by convention, so only the source matrix appears.
pub fn coral_align(
    source: &DataMatrix,
    target: &DataMatrix,
    lambda: f64,
) -> Result<(CoralModel, DataMatrix)> {
    if source.feature_count() != target.feature_count() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} features, target has {}",
            source.feature_count(),
            target.feature_count()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda must be a finite nonnegative real, got {lambda}"
        )));
    }
    let d = source.feature_count();
    let source_mean = column_mean(source);
    let target_mean = column_mean(target);
    let reg = DMatrix::identity(d, d) * lambda;
    let cov_s = SymmetricMatrix::symmetrized(covariance(source, &source_mean) + &reg)?;
    let cov_t = SymmetricMatrix::symmetrized(covariance(target, &target_mean) + &reg)?;
    let whiten = matrix_sqrt(&cov_s, true)?;
    let recolor = matrix_sqrt(&cov_t, false)?;
    let model = CoralModel {
        whiten,
        recolor,
        lambda,
        source_mean,
        target_mean,
    };
    let aligned = model.align(source)?;
    Ok((model, aligned))
}
