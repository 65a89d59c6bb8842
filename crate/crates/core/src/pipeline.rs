//! End-to-end classifier: canonical orientation, γ₀ selection by the
//! estimated error, prediction and persistence.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discriminant::{classify_value, QuadraticRule};
use crate::error::{Result, RqdaError};
use crate::estimation::{sample_moments, ClassMoments, FittedStats, Resolvent, TrainingSet};
use crate::gestim::{design_from_moments, GEstimate, GOptions};
use crate::linalg::logspace;
use crate::model::Priors;

/// Involution between caller labels and canonical labels (class 0 = minority).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub swapped: bool,
}

impl LabelMap {
    pub fn for_counts(n0: usize, n1: usize) -> Self {
        Self { swapped: n1 < n0 }
    }

    pub fn apply(&self, label: usize) -> usize {
        if self.swapped {
            1 - label
        } else {
            label
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningPoint {
    pub gamma0: f64,
    pub total_hat: Option<f64>,
    pub failure: Option<String>,
}

/// 25 log-spaced points on [1e-2, 1e2].
pub fn default_grid() -> Vec<f64> {
    logspace(-2.0, 2.0, 25)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImprovedModel {
    /// Canonical statistics, γ₀ and γ̂₁.
    pub fit: FittedStats,
    pub theta: f64,
    pub label_map: LabelMap,
    /// Canonical priors.
    pub priors: Priors,
    pub estimate: GEstimate,
    pub trace: Vec<TuningPoint>,
}

fn canonical_moments(
    train: &TrainingSet,
    priors: Option<Priors>,
) -> Result<(ClassMoments, ClassMoments, LabelMap, Priors)> {
    let map = LabelMap::for_counts(train.n0(), train.n1());
    let priors = match priors {
        Some(p) => p,
        None => Priors::from_counts(train.n0(), train.n1())?,
    };
    let m0 = sample_moments(&train.x0)?;
    let m1 = sample_moments(&train.x1)?;
    Ok(if map.swapped {
        (m1, m0, map, priors.swapped())
    } else {
        (m0, m1, map, priors)
    })
}

/// Fit at a fixed γ₀. `priors` are in the caller's labels; training
/// proportions when absent.
pub fn fit_improved(train: &TrainingSet, gamma0: f64, priors: Option<Priors>) -> Result<ImprovedModel> {
    fit_improved_with(train, gamma0, priors, &GOptions::default())
}

pub fn fit_improved_with(
    train: &TrainingSet,
    gamma0: f64,
    priors: Option<Priors>,
    opts: &GOptions,
) -> Result<ImprovedModel> {
    let (m0, m1, label_map, priors) = canonical_moments(train, priors)?;
    let (fit, estimate) = design_from_moments(&m0, &m1, gamma0, &priors, opts)?;
    Ok(ImprovedModel {
        fit,
        theta: estimate.theta_hat,
        label_map,
        priors,
        trace: vec![TuningPoint {
            gamma0,
            total_hat: Some(estimate.total_hat),
            failure: None,
        }],
        estimate,
    })
}

pub fn tune_gamma0(train: &TrainingSet, grid: &[f64], priors: Option<Priors>) -> Result<ImprovedModel> {
    tune_gamma0_with(train, grid, priors, &GOptions::default())
}

/// Grid argmin of the estimated total error; ties go to the smaller γ₀.
pub fn tune_gamma0_with(
    train: &TrainingSet,
    grid: &[f64],
    priors: Option<Priors>,
    opts: &GOptions,
) -> Result<ImprovedModel> {
    if grid.is_empty() {
        return Err(RqdaError::InvalidInput("empty γ₀ grid".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
        return Err(RqdaError::InvalidRegularizer(format!(
            "grid value {g} must be positive"
        )));
    }
    let (m0, m1, label_map, priors) = canonical_moments(train, priors)?;
    let trace = tuning_trace(&m0, &m1, grid, &priors, opts);
    let best = trace
        .iter()
        .filter_map(|t| t.total_hat.map(|e| (t.gamma0, e)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let Some((gamma0, _)) = best else {
        return Err(RqdaError::TuningFailed {
            failures: trace
                .iter()
                .map(|t| (t.gamma0, t.failure.clone().unwrap_or_default()))
                .collect(),
        });
    };
    let (fit, estimate) = design_from_moments(&m0, &m1, gamma0, &priors, opts)?;
    Ok(ImprovedModel {
        fit,
        theta: estimate.theta_hat,
        label_map,
        priors,
        estimate,
        trace,
    })
}

/// Estimated total error at every grid point, in grid order.
pub fn tuning_trace(
    m0: &ClassMoments,
    m1: &ClassMoments,
    grid: &[f64],
    priors: &Priors,
    opts: &GOptions,
) -> Vec<TuningPoint> {
    grid.par_iter()
        .map(
            |&gamma0| match design_from_moments(m0, m1, gamma0, priors, opts) {
                Ok((_, est)) => TuningPoint {
                    gamma0,
                    total_hat: Some(est.total_hat),
                    failure: None,
                },
                Err(e) => TuningPoint {
                    gamma0,
                    total_hat: None,
                    failure: Some(e.to_string()),
                },
            },
        )
        .collect()
}

impl ImprovedModel {
    pub fn dim(&self) -> usize {
        self.fit.dim()
    }

    pub fn gamma0(&self) -> f64 {
        self.fit.gamma0()
    }

    pub fn gamma1(&self) -> f64 {
        self.fit.gamma1()
    }

    pub fn rule(&self) -> QuadraticRule<'_> {
        QuadraticRule::improved(&self.fit, self.theta)
    }

    /// Scores oriented so that a positive value means the caller's class 0.
    pub fn score_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.nrows() == 0 {
            if x.ncols() != self.dim() && x.ncols() != 0 {
                return Err(RqdaError::DimensionMismatch {
                    expected: self.dim(),
                    got: x.ncols(),
                    context: "predict".into(),
                });
            }
            return Ok(Vec::new());
        }
        let mut s = self.rule().score_rows(x)?;
        if self.label_map.swapped {
            for v in &mut s {
                *v = -*v;
            }
        }
        Ok(s)
    }

    /// Labels in the caller's orientation.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        if x.nrows() == 0 {
            return self.score_rows(x).map(|_| Vec::new());
        }
        let s = self.rule().score_rows(x)?;
        Ok(s.into_iter()
            .map(|v| self.label_map.apply(classify_value(v)))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelDocument>(s)?.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn predict(model: &ImprovedModel, x: &DMatrix<f64>) -> Result<Vec<usize>> {
    model.predict(x)
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != p) {
        return Err(RqdaError::InvalidInput(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ClassDocument {
    n: usize,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    gamma: f64,
    resolvent: Vec<Vec<f64>>,
    log_det: f64,
}

impl ClassDocument {
    fn new(m: &ClassMoments, h: &Resolvent) -> Self {
        Self {
            n: m.n,
            mean: m.mean.iter().copied().collect(),
            covariance: rows(&m.covariance),
            gamma: h.gamma,
            resolvent: rows(&h.matrix),
            log_det: h.log_det,
        }
    }

    fn parts(&self, what: &str) -> Result<(ClassMoments, Resolvent)> {
        let covariance = from_rows(&self.covariance, what)?;
        let matrix = from_rows(&self.resolvent, what)?;
        let p = self.mean.len();
        if covariance.shape() != (p, p) || matrix.shape() != (p, p) {
            return Err(RqdaError::DimensionMismatch {
                expected: p,
                got: covariance.nrows(),
                context: format!("{what} matrices"),
            });
        }
        Ok((
            ClassMoments {
                mean: DVector::from_vec(self.mean.clone()),
                covariance,
                n: self.n,
            },
            Resolvent {
                matrix,
                log_det: self.log_det,
                gamma: self.gamma,
            },
        ))
    }
}

/// On-disk form; matrices are row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    theta: f64,
    label_map: LabelMap,
    priors: Priors,
    class0: ClassDocument,
    class1: ClassDocument,
    estimate: GEstimate,
    trace: Vec<TuningPoint>,
}

impl From<&ImprovedModel> for ModelDocument {
    fn from(m: &ImprovedModel) -> Self {
        Self {
            version: MODEL_FORMAT_VERSION,
            theta: m.theta,
            label_map: m.label_map,
            priors: m.priors,
            class0: ClassDocument::new(&m.fit.class0, &m.fit.h0),
            class1: ClassDocument::new(&m.fit.class1, &m.fit.h1),
            estimate: m.estimate,
            trace: m.trace.clone(),
        }
    }
}

impl ModelDocument {
    fn into_model(self) -> Result<ImprovedModel> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(RqdaError::InvalidInput(format!(
                "unsupported model format version {}",
                self.version
            )));
        }
        let (class0, h0) = self.class0.parts("class 0")?;
        let (class1, h1) = self.class1.parts("class 1")?;
        if class0.dim() != class1.dim() {
            return Err(RqdaError::DimensionMismatch {
                expected: class0.dim(),
                got: class1.dim(),
                context: "stored class dimensions".into(),
            });
        }
        Ok(ImprovedModel {
            fit: FittedStats {
                class0,
                class1,
                h0,
                h1,
            },
            theta: self.theta,
            label_map: self.label_map,
            priors: self.priors,
            estimate: self.estimate,
            trace: self.trace,
        })
    }
}
