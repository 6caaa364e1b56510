//! Deterministic L2-regularized linear classifier used to evaluate every
//! learned representation.
//!
//! `train` minimizes
//!
//! ```text
//!   (1/2) ||w||^2 + C * sum_i loss(y_i, w^T x_i + b)
//! ```
//!
//! with hinge or squared-hinge loss and an unregularized intercept `b`.
//! The solver works on the dual: two-variable updates on the maximal
//! violating pair keep the equality constraint `sum_i alpha_i y_i = 0`
//! satisfied, a lazily cached linear-kernel column makes each update
//! `O(n)`, and the intercept is re-optimized exactly (one-dimensional
//! convex minimization) whenever the duality gap is evaluated. Training
//! stops at duality gap `<= 1e-6 * n` or after `10^4` epochs of `n` pair
//! updates, whichever comes first. No randomness is involved: selection
//! ties break on the smaller index, so retraining reproduces the model
//! bit for bit.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::bin_io;
use crate::error::{Error, Result};
use crate::moments::DataMatrix;

const MODEL_MAGIC: &[u8; 4] = b"LMDL";
const MODEL_FORMAT_VERSION: u32 = 1;

/// Relative duality-gap target: gap <= GAP_TOL * n.
const GAP_TOL: f64 = 1e-6;
/// Hard cap on training epochs (one epoch = n pair updates).
const MAX_EPOCHS: usize = 10_000;
/// Cached kernel columns are bounded to roughly this many f64 entries.
const KERNEL_CACHE_ENTRIES: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Hinge,
    SquaredHinge,
}

impl Loss {
    fn tag(self) -> u8 {
        match self {
            Loss::Hinge => 0,
            Loss::SquaredHinge => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Loss::Hinge),
            1 => Ok(Loss::SquaredHinge),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown loss tag {other}"),
            }),
        }
    }
}

/// Samples with labels in `{-1, +1}`.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    x: DataMatrix,
    y: Vec<i8>,
}

impl LabeledSet {
    pub fn new(x: DataMatrix, y: Vec<i8>) -> Result<Self> {
        if y.len() != x.sample_count() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} samples",
                y.len(),
                x.sample_count()
            )));
        }
        if let Some(bad) = y.iter().find(|&&l| l != -1 && l != 1) {
            return Err(Error::InvalidInput(format!(
                "labels must be -1 or +1, got {bad}"
            )));
        }
        Ok(Self { x, y })
    }

    pub fn matrix(&self) -> &DataMatrix {
        &self.x
    }

    pub fn labels(&self) -> &[i8] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Subset with the given sample indices, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> Result<LabeledSet> {
        let x = self.x.select_columns(indices)?;
        let y = indices.iter().map(|&i| self.y[i]).collect();
        LabeledSet::new(x, y)
    }
}

/// Weight vector and intercept of a trained linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: DVector<f64>,
    bias: f64,
    reg_c: f64,
    loss: Loss,
}

impl LinearModel {
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn reg_c(&self) -> f64 {
        self.reg_c
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    /// Binary layout (little endian): magic `LMDL`, version u32, d u32,
    /// loss tag u8, C f64, bias f64, then d f64 weights. Bit-exact
    /// round trip.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        bin_io::write_u32(w, MODEL_FORMAT_VERSION)?;
        bin_io::write_u32(w, self.feature_dim() as u32)?;
        bin_io::write_u8(w, self.loss.tag())?;
        bin_io::write_f64(w, self.reg_c)?;
        bin_io::write_f64(w, self.bias)?;
        for v in self.weights.iter() {
            bin_io::write_f64(w, *v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        bin_io::expect_magic(r, MODEL_MAGIC)?;
        let version = bin_io::read_u32(r)?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse {
                line: 0,
                message: format!("unsupported linear model version {version}"),
            });
        }
        let d = bin_io::read_u32(r)? as usize;
        if d == 0 {
            return Err(Error::Parse {
                line: 0,
                message: "linear model header has d=0".into(),
            });
        }
        let loss = Loss::from_tag(bin_io::read_u8(r)?)?;
        let reg_c = bin_io::read_f64(r)?;
        let bias = bin_io::read_f64(r)?;
        let mut weights = DVector::zeros(d);
        for i in 0..d {
            weights[i] = bin_io::read_f64(r)?;
        }
        bin_io::expect_eof(r)?;
        Ok(Self {
            weights,
            bias,
            reg_c,
            loss,
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

/// Per-sample loss at margin `z = y * (w^T x + b)`.
fn pointwise_loss(loss: Loss, z: f64) -> f64 {
    let slack = (1.0 - z).max(0.0);
    match loss {
        Loss::Hinge => slack,
        Loss::SquaredHinge => slack * slack,
    }
}

/// Primal objective of a model on a labeled set.
pub fn objective(model: &LinearModel, data: &LabeledSet) -> Result<f64> {
    if data.matrix().feature_count() != model.feature_dim() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} features, data has {}",
            model.feature_dim(),
            data.matrix().feature_count()
        )));
    }
    let mut total = 0.5 * model.weights.norm_squared();
    for (j, &label) in data.labels().iter().enumerate() {
        let score = model.weights.dot(&data.matrix().values().column(j)) + model.bias;
        total += model.reg_c * pointwise_loss(model.loss, f64::from(label) * score);
    }
    Ok(total)
}

/// Lazily computed columns of the linear kernel `K_ij = x_i^T x_j`, with a
/// bounded FIFO cache. Recomputed columns are bitwise identical, so the
/// cache policy cannot affect results.
struct KernelCache<'a> {
    x: &'a DataMatrix,
    columns: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a DataMatrix) -> Self {
        let n = x.sample_count();
        let capacity = (KERNEL_CACHE_ENTRIES / n.max(1)).clamp(2, n.max(2));
        Self {
            x,
            columns: vec![None; n],
            order: VecDeque::new(),
            capacity,
        }
    }

    fn column(&mut self, j: usize) -> &[f64] {
        if self.columns[j].is_none() {
            if self.order.len() >= self.capacity {
                if let Some(evict) = self.order.pop_front() {
                    self.columns[evict] = None;
                }
            }
            let xj = self.x.values().column(j);
            let col = self
                .x
                .values()
                .column_iter()
                .map(|c| c.dot(&xj))
                .collect::<Vec<f64>>();
            self.columns[j] = Some(col);
            self.order.push_back(j);
        }
        self.columns[j].as_deref().expect("column just inserted")
    }
}

/// Exact minimizer over `b` of `C * sum_i loss(y_i * (m_i + b))` for fixed
/// margins `m_i = w^T x_i`. For hinge loss the objective is piecewise
/// linear; the optimum is the midpoint of the flat interval so the result
/// mirrors exactly under label flips. For squared hinge the derivative is
/// monotone and bisection nails the root.
fn optimal_bias(loss: Loss, margins: &[f64], y: &[i8]) -> f64 {
    match loss {
        Loss::Hinge => {
            let mut breakpoints: Vec<f64> = margins
                .iter()
                .zip(y)
                .map(|(&m, &label)| f64::from(label) - m)
                .collect();
            breakpoints.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
            let n_pos = y.iter().filter(|&&l| l == 1).count();
            // slope(b) = C * (#breakpoints <= b  -  n_pos); zero between
            // event n_pos and the next one.
            if n_pos == 0 {
                return breakpoints[0] - 1.0;
            }
            if n_pos == breakpoints.len() {
                return breakpoints[breakpoints.len() - 1] + 1.0;
            }
            0.5 * (breakpoints[n_pos - 1] + breakpoints[n_pos])
        }
        Loss::SquaredHinge => {
            let derivative = |b: f64| -> f64 {
                let mut g = 0.0;
                for (&m, &label) in margins.iter().zip(y) {
                    let yl = f64::from(label);
                    let slack = 1.0 - yl * (m + b);
                    if slack > 0.0 {
                        g -= yl * slack;
                    }
                }
                g
            };
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (&m, &label) in margins.iter().zip(y) {
                let bp = f64::from(label) - m;
                lo = lo.min(bp);
                hi = hi.max(bp);
            }
            let mut lo = lo - 1.0;
            let mut hi = hi + 1.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if derivative(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// Trains the classifier. Requires at least one sample of each class.
pub fn train(data: &LabeledSet, reg_c: f64, loss: Loss) -> Result<LinearModel> {
    if !(reg_c > 0.0 && reg_c.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "regularization C must be a finite positive real, got {reg_c}"
        )));
    }
    let n = data.len();
    let n_pos = data.labels().iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::DegenerateLabels(
            "training requires at least one sample of each class".into(),
        ));
    }

    let (upper, diag_shift) = match loss {
        Loss::Hinge => (reg_c, 0.0),
        Loss::SquaredHinge => (f64::INFINITY, 0.5 / reg_c),
    };
    let x = data.matrix();
    let y = data.labels();
    let d = x.feature_count();

    let mut cache = KernelCache::new(x);
    let diag: Vec<f64> = (0..n)
        .map(|j| x.values().column(j).norm_squared())
        .collect();

    let mut alpha = vec![0.0f64; n];
    let mut w = DVector::zeros(d);
    // margins[k] = w^T x_k, maintained incrementally
    let mut margins = vec![0.0f64; n];

    let gap_target = GAP_TOL * n as f64;
    let max_iterations = MAX_EPOCHS.saturating_mul(n);
    let mut iteration = 0usize;

    loop {
        // duality gap check, once per epoch
        if iteration % n == 0 {
            let bias = optimal_bias(loss, &margins, y);
            let mut primal = 0.5 * w.norm_squared();
            for k in 0..n {
                primal += reg_c * pointwise_loss(loss, f64::from(y[k]) * (margins[k] + bias));
            }
            let mut dual = -0.5 * w.norm_squared();
            for k in 0..n {
                dual += alpha[k] - 0.5 * diag_shift * alpha[k] * alpha[k];
            }
            if primal - dual <= gap_target {
                break;
            }
        }
        if iteration >= max_iterations {
            break;
        }

        // maximal violating pair over I_up / I_low, ties to the smaller index
        let mut up: Option<(usize, f64)> = None;
        let mut low: Option<(usize, f64)> = None;
        for k in 0..n {
            let yl = f64::from(y[k]);
            let grad = yl * margins[k] + diag_shift * alpha[k] - 1.0;
            let score = -yl * grad;
            let in_up = (y[k] == 1 && alpha[k] < upper) || (y[k] == -1 && alpha[k] > 0.0);
            let in_low = (y[k] == -1 && alpha[k] < upper) || (y[k] == 1 && alpha[k] > 0.0);
            if in_up && up.map_or(true, |(_, best)| score > best) {
                up = Some((k, score));
            }
            if in_low && low.map_or(true, |(_, best)| score < best) {
                low = Some((k, score));
            }
        }
        let (Some((i, m_val)), Some((j, m_low))) = (up, low) else {
            break;
        };
        let violation = m_val - m_low;
        if violation <= 1e-14 * (1.0 + m_val.abs() + m_low.abs()) {
            break; // KKT satisfied to machine precision
        }

        let kij = cache.column(i)[j];
        let denom = (diag[i] + diag[j] - 2.0 * kij + 2.0 * diag_shift).max(1e-12);
        let room_i = if y[i] == 1 { upper - alpha[i] } else { alpha[i] };
        let room_j = if y[j] == 1 { alpha[j] } else { upper - alpha[j] };
        let step = (violation / denom).min(room_i).min(room_j);
        if !(step > 0.0) {
            break;
        }

        alpha[i] += f64::from(y[i]) * step;
        alpha[j] -= f64::from(y[j]) * step;
        w.axpy(step, &x.values().column(i), 1.0);
        w.axpy(-step, &x.values().column(j), 1.0);
        {
            let col_i = cache.column(i).to_vec();
            let col_j = cache.column(j);
            for k in 0..n {
                margins[k] += step * (col_i[k] - col_j[k]);
            }
        }
        iteration += 1;
    }

    // recompute w from the dual variables to shed incremental drift
    let mut weights = DVector::zeros(d);
    for k in 0..n {
        if alpha[k] != 0.0 {
            weights.axpy(alpha[k] * f64::from(y[k]), &x.values().column(k), 1.0);
        }
    }
    let final_margins: Vec<f64> = (0..n)
        .map(|k| weights.dot(&x.values().column(k)))
        .collect();
    let bias = optimal_bias(loss, &final_margins, y);

    Ok(LinearModel {
        weights,
        bias,
        reg_c,
        loss,
    })
}

/// `sign(w^T x_j + b)` per column; a score of exactly zero maps to `+1`.
pub fn predict(model: &LinearModel, x: &DataMatrix) -> Result<Vec<i8>> {
    if x.feature_count() != model.feature_dim() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} features, samples have {}",
            model.feature_dim(),
            x.feature_count()
        )));
    }
    Ok(x.values()
        .column_iter()
        .map(|col| {
            let score = model.weights.dot(&col) + model.bias;
            if score >= 0.0 {
                1
            } else {
                -1
            }
        })
        .collect())
}

/// Fraction of samples whose prediction equals the label.
pub fn accuracy(model: &LinearModel, data: &LabeledSet) -> Result<f64> {
    let predictions = predict(model, data.matrix())?;
    let correct = predictions
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
