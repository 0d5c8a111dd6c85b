//! One-vs-rest linear SVMs.
//!
//! Each binary problem minimizes the L2-regularized squared-hinge objective
//!
//! ```text
//! ½(‖w‖² + b²) + C Σᵢ max(0, 1 − yᵢ(w·xᵢ + b))²
//! ```
//!
//! with the bias handled as an extra constant feature (so it is regularized
//! too). The solver is dual coordinate descent over the box `α ≥ 0`, visiting
//! coordinates in a seeded random order each epoch and stopping once the
//! duality gap falls below a relative tolerance.

use std::io::{self, Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::binio;
use crate::extract::mix64;

pub const SVM_MAGIC: &[u8; 4] = b"MSVM";

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("category {0} has no positive training examples")]
    DegenerateLabels(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty set")]
    EmptySet,
    #[error("label {label} outside [0, {num_categories})")]
    LabelOutOfRange { label: usize, num_categories: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("corrupt SVM model: {0}")]
    CorruptModel(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_categories: usize,
}

impl LabeledSet {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_categories: usize) -> Result<Self, ClassifyError> {
        if labels.is_empty() {
            return Err(ClassifyError::EmptySet);
        }
        if features.nrows() != labels.len() {
            return Err(ClassifyError::DimensionMismatch {
                expected: labels.len(),
                got: features.nrows(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_categories) {
            return Err(ClassifyError::LabelOutOfRange {
                label,
                num_categories,
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ClassifyError::NonFinite);
        }
        Ok(LabeledSet {
            features,
            labels,
            num_categories,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// Stop when `primal − dual ≤ tolerance · primal`.
    pub tolerance: f64,
    pub max_epochs: usize,
    /// Seeds the per-epoch coordinate order.
    pub seed: u64,
    /// Value of the constant feature that carries the bias.
    pub bias_feature: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tolerance: 1e-4,
            max_epochs: 5000,
            seed: 0,
            bias_feature: 1.0,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<(), ClassifyError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(ClassifyError::InvalidParameter(format!("C must be positive, got {}", self.c)));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 || self.max_epochs == 0 {
            return Err(ClassifyError::InvalidParameter("tolerance and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    /// Dual objective `½αᵀ(Q + I/2C)α − Σα` after each epoch.
    pub dual_trace: Vec<f64>,
}

fn dot(a: ArrayView1<'_, f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Primal objective `½(‖w‖² + b²) + C Σ max(0, 1 − y(w·x + b·B))²`.
pub fn primal_objective(x: ArrayView2<'_, f64>, y: &[f64], w: &[f64], bias: f64, cfg: &SvmConfig) -> f64 {
    let reg = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + bias * bias);
    let loss: f64 = x
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, &yi)| {
            let slack = (1.0 - yi * (dot(row, w) + bias * cfg.bias_feature)).max(0.0);
            slack * slack
        })
        .sum();
    reg + cfg.c * loss
}

/// Solves one binary problem with labels `y ∈ {−1, +1}`.
pub fn solve_binary(x: ArrayView2<'_, f64>, y: &[f64], cfg: &SvmConfig) -> BinarySolution {
    let (n, d) = x.dim();
    let diag = 0.5 / cfg.c;
    let bf = cfg.bias_feature;
    let qd: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() + bf * bf + diag)
        .collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut epochs = 0;

    while epochs < cfg.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let row = x.row(i);
            let g = y[i] * (dot(row, &w) + b * bf) - 1.0 + diag * alpha[i];
            let pg = if alpha[i] == 0.0 { g.min(0.0) } else { g };
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).max(0.0);
                let step = (alpha[i] - old) * y[i];
                w.iter_mut().zip(row.iter()).for_each(|(wj, xj)| *wj += step * xj);
                b += step * bf;
            }
        }
        epochs += 1;

        let wnorm = w.iter().map(|v| v * v).sum::<f64>() + b * b;
        let dual = 0.5 * wnorm + 0.5 * diag * alpha.iter().map(|a| a * a).sum::<f64>() - alpha.iter().sum::<f64>();
        trace.push(dual);
        let primal = primal_objective(x, y, &w, b, cfg);
        if primal + dual <= cfg.tolerance * primal.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("SVM solver stopped after {epochs} epochs without reaching the duality-gap tolerance");
    }
    BinarySolution {
        weights: w,
        bias: b * bf,
        alpha,
        epochs,
        converged,
        dual_trace: trace,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// `M × d`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub c_param: f64,
}

/// Trains one binary problem per category (category vs. the rest). The
/// problems are independent and solved in parallel; the result does not
/// depend on scheduling.
pub fn svm_train(train: &LabeledSet, cfg: &SvmConfig) -> Result<SvmModel, ClassifyError> {
    cfg.validate()?;
    let m = train.num_categories;
    if m < 2 {
        return Err(ClassifyError::InvalidParameter("need at least two categories".into()));
    }
    let mut counts = vec![0usize; m];
    for &l in &train.labels {
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(ClassifyError::DegenerateLabels(empty));
    }
    let solutions: Vec<BinarySolution> = (0..m)
        .into_par_iter()
        .map(|cat| {
            let y: Vec<f64> = train
                .labels
                .iter()
                .map(|&l| if l == cat { 1.0 } else { -1.0 })
                .collect();
            let sub = SvmConfig {
                seed: mix64(cfg.seed, cat as u64),
                ..*cfg
            };
            solve_binary(train.features.view(), &y, &sub)
        })
        .collect();
    let d = train.dim();
    let mut weights = Array2::zeros((m, d));
    let mut biases = Array1::zeros(m);
    for (cat, sol) in solutions.into_iter().enumerate() {
        weights.row_mut(cat).assign(&ArrayView1::from(&sol.weights));
        biases[cat] = sol.bias;
    }
    Ok(SvmModel {
        weights,
        biases,
        c_param: cfg.c,
    })
}

/// Returns the winning category (lowest index on ties) and all scores.
pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<(usize, Vec<f64>), ClassifyError> {
    if x.len() != model.dim() {
        return Err(ClassifyError::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    let scores: Vec<f64> = model
        .weights
        .rows()
        .into_iter()
        .zip(model.biases.iter())
        .map(|(w, b)| dot(w, x) + b)
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((best, scores))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub overall: f64,
    /// Mean of per-category accuracies over categories present in the set.
    pub class_averaged: f64,
    /// `None` for categories with no test items.
    pub per_category: Vec<Option<f64>>,
}

pub fn accuracy(model: &SvmModel, test: &LabeledSet) -> Result<AccuracyReport, ClassifyError> {
    if test.is_empty() {
        return Err(ClassifyError::EmptySet);
    }
    let predictions = test
        .features
        .rows()
        .into_iter()
        .map(|row| match row.as_slice() {
            Some(s) => svm_predict(model, s).map(|p| p.0),
            None => svm_predict(model, &row.to_vec()).map(|p| p.0),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(score_predictions(&predictions, &test.labels, test.num_categories))
}

pub fn score_predictions(predictions: &[usize], labels: &[usize], num_categories: usize) -> AccuracyReport {
    let mut hits = vec![0usize; num_categories];
    let mut totals = vec![0usize; num_categories];
    for (&p, &l) in predictions.iter().zip(labels) {
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    let per_category: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per_category.iter().flatten().copied().collect();
    AccuracyReport {
        overall: correct as f64 / labels.len() as f64,
        class_averaged: present.iter().sum::<f64>() / present.len() as f64,
        per_category,
    }
}

impl SvmModel {
    pub fn num_categories(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ClassifyError> {
        binio::write_header(w, SVM_MAGIC)?;
        binio::write_u32(w, self.num_categories() as u32)?;
        binio::write_u32(w, self.dim() as u32)?;
        binio::write_f64(w, self.c_param)?;
        binio::write_f64_slice(w, &self.weights.iter().copied().collect::<Vec<_>>())?;
        binio::write_f64_slice(w, &self.biases.to_vec())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ClassifyError> {
        let corrupt = |e: io::Error| ClassifyError::CorruptModel(e.to_string());
        if !binio::read_header(r, SVM_MAGIC).map_err(corrupt)? {
            return Err(ClassifyError::CorruptModel("bad magic or version".into()));
        }
        let m = binio::read_u32(r).map_err(corrupt)? as usize;
        let d = binio::read_u32(r).map_err(corrupt)? as usize;
        let c_param = binio::read_f64(r).map_err(corrupt)?;
        let weights = Array2::from_shape_vec((m, d), binio::read_f64_vec(r, m * d).map_err(corrupt)?)
            .map_err(|e| ClassifyError::CorruptModel(e.to_string()))?;
        let biases = Array1::from(binio::read_f64_vec(r, m).map_err(corrupt)?);
        Ok(SvmModel {
            weights,
            biases,
            c_param,
        })
    }
}
