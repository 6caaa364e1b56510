//! The single-layer transform solver, the multi-layer stack, and the
//! spectral diagnostics that certify when one layer contracts the
//! moment gap.
//!
//! One layer minimizes
//!
//! ```text
//!   || X^T - X^T P ||_F^2  +  gamma1 * tr(P^T Lambda P)  +  gamma2 * tr(P^T DeltaM^2 P)
//! ```
//!
//! over the `d x d` transform `P`, where `Lambda` is the diagonal of squared
//! feature-row norms and `DeltaM` is the gap between the source and target
//! second moments of the current input. Setting the gradient to zero gives
//! the linear system
//!
//! ```text
//!   (X X^T + gamma1 * Lambda + gamma2 * DeltaM^2) P = X X^T
//! ```
//!
//! which is solved with a Cholesky factorization, escalating through a
//! small diagonal-jitter ladder when the system is only semidefinite.
//! Stacking `K` layers with the update `X <- P^T X` keeps the feature
//! dimension fixed and records the moment-gap distance of every layer's
//! input plus the final output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix};

use crate::bin_io;
use crate::error::{Error, Result};
use crate::moments::{
    eigen_extremes, moment_gap, row_norm_diag, spectral_norm, DataMatrix, DomainPair,
    SymmetricMatrix,
};

/// Jitter ladder for semidefinite systems: `eps * mean(diag) * I` is added
/// before refactorizing, with `eps` escalating tenfold per step.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Slack used when judging the contraction inequality in floating point.
const CONTRACTION_SLACK: f64 = 1e-9;

const STACK_MAGIC: &[u8; 4] = b"FLAM";
const STACK_FORMAT_VERSION: u32 = 1;

/// Regularization weights for one layer solve.
///
/// `gamma2_scale_by_n` rescales the moment-gap weight by the sample count
/// of the matrix being solved, so grid values transfer across dataset
/// sizes; the reconstruction term grows linearly with `n` while the gap
/// penalty does not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma2_scale_by_n: bool,
}

impl LayerParams {
    /// Validates `gamma1 >= 0` and `gamma2 >= 0`; scaling defaults to on.
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(gamma1 >= 0.0 && gamma1.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gamma1 must be a finite nonnegative real, got {gamma1}"
            )));
        }
        if !(gamma2 >= 0.0 && gamma2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gamma2 must be a finite nonnegative real, got {gamma2}"
            )));
        }
        Ok(Self {
            gamma1,
            gamma2,
            gamma2_scale_by_n: true,
        })
    }

    pub fn with_scale_by_n(mut self, scale: bool) -> Self {
        self.gamma2_scale_by_n = scale;
        self
    }

    /// Effective moment-gap weight for a matrix with `n` samples.
    pub fn effective_gamma2(&self, n: usize) -> f64 {
        if self.gamma2_scale_by_n {
            self.gamma2 * n as f64
        } else {
            self.gamma2
        }
    }
}

/// An ordered stack of `d x d` layer transforms with the hyperparameters
/// that produced them and the moment-gap distance trace.
///
/// `per_layer_distance` has `K + 1` entries: the distance measured on each
/// layer's input, then the distance of the final output.
#[derive(Debug, Clone, PartialEq)]
pub struct StackModel {
    layers: Vec<DMatrix<f64>>,
    params: LayerParams,
    per_layer_distance: Vec<f64>,
}

impl StackModel {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }

    pub fn per_layer_distance(&self) -> &[f64] {
        &self.per_layer_distance
    }

    /// Serializes to the versioned binary container. Layout (little endian):
    /// magic `FLAM`, format version u32, d u32, K u32, gamma1 f64,
    /// gamma2 f64, reserved f64, scale-by-n flag u8, then K row-major
    /// `d x d` f64 matrices, then K+1 f64 distances. Round-trips bit-exact.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(STACK_MAGIC)?;
        bin_io::write_u32(w, STACK_FORMAT_VERSION)?;
        bin_io::write_u32(w, self.feature_dim() as u32)?;
        bin_io::write_u32(w, self.layer_count() as u32)?;
        bin_io::write_f64(w, self.params.gamma1)?;
        bin_io::write_f64(w, self.params.gamma2)?;
        bin_io::write_f64(w, 0.0)?; // reserved
        bin_io::write_u8(w, u8::from(self.params.gamma2_scale_by_n))?;
        for layer in &self.layers {
            for i in 0..layer.nrows() {
                for j in 0..layer.ncols() {
                    bin_io::write_f64(w, layer[(i, j)])?;
                }
            }
        }
        for dist in &self.per_layer_distance {
            bin_io::write_f64(w, *dist)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        bin_io::expect_magic(r, STACK_MAGIC)?;
        let version = bin_io::read_u32(r)?;
        if version != STACK_FORMAT_VERSION {
            return Err(Error::Parse {
                line: 0,
                message: format!("unsupported stack model version {version}"),
            });
        }
        let d = bin_io::read_u32(r)? as usize;
        let k = bin_io::read_u32(r)? as usize;
        let gamma1 = bin_io::read_f64(r)?;
        let gamma2 = bin_io::read_f64(r)?;
        let _reserved = bin_io::read_f64(r)?;
        let scale = bin_io::read_u8(r)? != 0;
        if d == 0 || k == 0 {
            return Err(Error::Parse {
                line: 0,
                message: format!("stack model header has d={d}, K={k}"),
            });
        }
        let mut layers = Vec::with_capacity(k);
        for _ in 0..k {
            let mut m = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] = bin_io::read_f64(r)?;
                }
            }
            layers.push(m);
        }
        let mut per_layer_distance = Vec::with_capacity(k + 1);
        for _ in 0..=k {
            per_layer_distance.push(bin_io::read_f64(r)?);
        }
        bin_io::expect_eof(r)?;
        Ok(Self {
            layers,
            params: LayerParams {
                gamma1,
                gamma2,
                gamma2_scale_by_n: scale,
            },
            per_layer_distance,
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

/// Result of probing one gamma2 = 0 layer against the contraction
/// inequality `||DeltaM||_F^2 >= ||P^T DeltaM P||_F^2`.
#[derive(Debug, Clone, Copy)]
pub struct ContractionReport {
    pub sigma_max: f64,
    pub gap_before: f64,
    pub gap_after: f64,
    pub holds: bool,
}

/// Solves one layer on the combined matrix `x` whose first `n_source`
/// columns are source samples. Returns the `d x d` transform `P`.
pub fn solve_layer(x: &DataMatrix, n_source: usize, params: &LayerParams) -> Result<DMatrix<f64>> {
    let pair = DomainPair::from_combined(x.clone(), n_source)?;
    let gap = moment_gap(&pair.source(), &pair.target())?;
    solve_layer_with_delta(x, &gap.delta, params)
}

/// Layer solve with the moment-gap matrix already computed; used by
/// [`fit_stack`] so the distance trace and the penalty share one `DeltaM`.
fn solve_layer_with_delta(
    x: &DataMatrix,
    delta: &SymmetricMatrix,
    params: &LayerParams,
) -> Result<DMatrix<f64>> {
    let gram = {
        let raw = x.values() * x.values().transpose();
        SymmetricMatrix::symmetrized(raw)?.into_values()
    };
    let lambda = row_norm_diag(x);

    let mut system = gram.clone();
    if params.gamma1 != 0.0 {
        system += lambda.values() * params.gamma1;
    }
    let gamma2 = params.effective_gamma2(x.sample_count());
    if gamma2 != 0.0 {
        let delta_sq =
            SymmetricMatrix::symmetrized(delta.values() * delta.values())?.into_values();
        system += delta_sq * gamma2;
    }

    solve_spd(system, &gram)
}

/// Solves `S P = B` for `P` with Cholesky, escalating through the jitter
/// ladder when `S` is only semidefinite.
fn solve_spd(system: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = Cholesky::new(system.clone()) {
        return Ok(chol.solve(rhs));
    }
    let d = system.nrows();
    let mean_diag = system.diagonal().sum() / d as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut eps = JITTER_START;
    while eps <= JITTER_MAX {
        let mut jittered = system.clone();
        for i in 0..d {
            jittered[(i, i)] += eps * scale;
        }
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(chol.solve(rhs));
        }
        eps *= 10.0;
    }
    let sym = SymmetricMatrix::symmetrized(system)?;
    let (lo, hi) = eigen_extremes(&sym);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    Err(Error::NumericalFailure {
        reason: "layer system remained non-positive-definite after jitter".into(),
        condition,
    })
}

/// Fits a `K`-layer stack on the pair of domains.
///
/// Each iteration forms the combined matrix, records the moment-gap
/// distance of the current input, solves one layer, and updates both
/// blocks by `X <- P^T X`. The final output distance is appended, so the
/// trace has `K + 1` entries. Output dimensionality equals input
/// dimensionality.
pub fn fit_stack(
    source: &DataMatrix,
    target: &DataMatrix,
    params: &LayerParams,
    layers: usize,
) -> Result<(StackModel, DomainPair)> {
    if layers == 0 {
        return Err(Error::InvalidInput("layer count must be at least 1".into()));
    }
    let mut pair = DomainPair::new(source, target)?;
    let n_source = pair.n_source();
    let mut transforms = Vec::with_capacity(layers);
    let mut distances = Vec::with_capacity(layers + 1);

    for layer_index in 0..layers {
        let gap = moment_gap(&pair.source(), &pair.target())?;
        distances.push(gap.distance);
        let p = solve_layer_with_delta(pair.combined(), &gap.delta, params).map_err(|e| {
            Error::Layer {
                layer: layer_index + 1,
                source: Box::new(e),
            }
        })?;
        let updated = p.transpose() * pair.combined().values();
        pair = DomainPair::from_combined(DataMatrix::new(updated)?, n_source)?;
        transforms.push(p);
    }
    distances.push(moment_gap(&pair.source(), &pair.target())?.distance);

    Ok((
        StackModel {
            layers: transforms,
            params: *params,
            per_layer_distance: distances,
        },
        pair,
    ))
}

/// Applies the learned stack to new samples: `P_K^T ... P_1^T X`.
pub fn apply_stack(x: &DataMatrix, model: &StackModel) -> Result<DataMatrix> {
    if x.feature_count() != model.feature_dim() {
        return Err(Error::DimensionMismatch(format!(
            "samples have {} features but the stack was fit on {}",
            x.feature_count(),
            model.feature_dim()
        )));
    }
    let mut values = x.values().clone();
    for p in &model.layers {
        values = p.transpose() * values;
    }
    DataMatrix::new(values)
}

/// The regularization weight above which one gamma2 = 0 layer provably
/// does not increase the moment gap:
/// `(lambda_max(X X^T) - lambda_min(X X^T)) / lambda_min(Lambda)`.
///
/// Fails when the smallest diagonal entry of `Lambda` is not strictly
/// positive; drop empty feature rows before calling.
pub fn theorem2_threshold(x: &DataMatrix) -> Result<f64> {
    let lambda = row_norm_diag(x);
    let lambda_min = (0..x.feature_count())
        .map(|i| lambda.values()[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if lambda_min <= 0.0 {
        return Err(Error::DegenerateFeature(
            "a feature row has zero norm; drop empty rows before computing the threshold".into(),
        ));
    }
    let gram = SymmetricMatrix::symmetrized(x.values() * x.values().transpose())?;
    let (lo, hi) = eigen_extremes(&gram);
    Ok(((hi - lo) / lambda_min).max(0.0))
}

/// Solves the gamma2 = 0 layer at the given `gamma1` and reports whether
/// the contraction inequality held: the spectral norm of `P`, the squared
/// Frobenius gap before (`||DeltaM||_F^2`) and after (`||P^T DeltaM P||_F^2`),
/// and the verdict with a `1e-9` slack.
pub fn contraction_check(
    x: &DataMatrix,
    n_source: usize,
    gamma1: f64,
) -> Result<ContractionReport> {
    let params = LayerParams::new(gamma1, 0.0)?;
    let pair = DomainPair::from_combined(x.clone(), n_source)?;
    let gap = moment_gap(&pair.source(), &pair.target())?;
    let p = solve_layer_with_delta(x, &gap.delta, &params)?;
    let projected = p.transpose() * gap.delta.values() * &p;
    let gap_after = projected.norm_squared();
    Ok(ContractionReport {
        sigma_max: spectral_norm(&p),
        gap_before: gap.distance,
        gap_after,
        holds: gap_after <= gap.distance + CONTRACTION_SLACK,
    })
}
