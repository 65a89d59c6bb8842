//! Discriminant scores, the sign decision and empirical error rates.
//!
//! Every quadratic rule here has the form
//! W(x) = κ − ½(x−a₀)ᵀA₀(x−a₀) + ½(x−a₁)ᵀA₁(x−a₁), which is what
//! [`QuadraticRule`] stores; the linear R-LDA baseline is kept separate.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RqdaError};
use crate::estimation::{regularized_resolvent, ClassMoments, FittedStats, Resolvent};
use crate::linalg::{quad_form, spd_inverse_logdet, trace_product};
use crate::model::{MixtureModel, Priors};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    TrueQda,
    StandardRqda,
    ImprovedRqda,
    Rlda,
}

impl RuleKind {
    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::TrueQda => "true-qda",
            RuleKind::StandardRqda => "standard-rqda",
            RuleKind::ImprovedRqda => "improved-rqda",
            RuleKind::Rlda => "rlda",
        }
    }

    /// Scale applied to W before taking conditional moments.
    fn moment_scale(&self, p: usize) -> f64 {
        let sp = (p as f64).sqrt();
        match self {
            RuleKind::ImprovedRqda => 2.0 / sp,
            _ => 1.0 / sp,
        }
    }
}

impl std::fmt::Display for RuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub value: f64,
    pub rule_kind: RuleKind,
}

/// Label 0 iff the score is strictly positive.
pub fn classify(score: &Score) -> usize {
    classify_value(score.value)
}

pub fn classify_value(value: f64) -> usize {
    if value > 0.0 {
        0
    } else {
        1
    }
}

#[derive(Clone, Debug)]
pub struct QuadraticRule<'a> {
    pub kind: RuleKind,
    pub kappa: f64,
    pub centers: [Cow<'a, DVector<f64>>; 2],
    pub metrics: [Cow<'a, DMatrix<f64>>; 2],
}

impl<'a> QuadraticRule<'a> {
    /// Bayes rule with known statistics.
    pub fn true_qda(model: &'a MixtureModel) -> Result<Self> {
        let (inv0, ld0) = spd_inverse_logdet(model.class0.covariance(), "Σ₀")?;
        let (inv1, ld1) = spd_inverse_logdet(model.class1.covariance(), "Σ₁")?;
        Ok(Self {
            kind: RuleKind::TrueQda,
            kappa: -0.5 * (ld0 - ld1) - model.priors.log_ratio(),
            centers: [
                Cow::Borrowed(model.class0.mean()),
                Cow::Borrowed(model.class1.mean()),
            ],
            metrics: [Cow::Owned(inv0), Cow::Owned(inv1)],
        })
    }

    /// Plug-in rule with one shared γ and the log-determinant/prior offset.
    pub fn standard(fit: &'a FittedStats, priors: &Priors) -> Result<Self> {
        if fit.gamma0() != fit.gamma1() {
            return Err(RqdaError::InvalidRegularizer(format!(
                "standard R-QDA needs a shared γ, got γ₀={} and γ₁={}",
                fit.gamma0(),
                fit.gamma1()
            )));
        }
        Ok(Self {
            kind: RuleKind::StandardRqda,
            kappa: 0.5 * (fit.h0.log_det - fit.h1.log_det) - priors.log_ratio(),
            centers: [Cow::Borrowed(&fit.class0.mean), Cow::Borrowed(&fit.class1.mean)],
            metrics: [Cow::Borrowed(&fit.h0.matrix), Cow::Borrowed(&fit.h1.matrix)],
        })
    }

    /// Two-regularizer rule with the scalar bias θ.
    pub fn improved(fit: &'a FittedStats, theta: f64) -> Self {
        let sp = (fit.dim() as f64).sqrt();
        Self {
            kind: RuleKind::ImprovedRqda,
            kappa: -0.5 * theta * sp,
            centers: [Cow::Borrowed(&fit.class0.mean), Cow::Borrowed(&fit.class1.mean)],
            metrics: [Cow::Borrowed(&fit.h0.matrix), Cow::Borrowed(&fit.h1.matrix)],
        }
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn score(&self, x: &DVector<f64>) -> Score {
        let d0 = x - self.centers[0].as_ref();
        let d1 = x - self.centers[1].as_ref();
        let value =
            self.kappa - 0.5 * quad_form(&d0, &self.metrics[0]) + 0.5 * quad_form(&d1, &self.metrics[1]);
        Score {
            value,
            rule_kind: self.kind,
        }
    }

    /// Scores of every row of `x`.
    pub fn score_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_cols(x, self.dim())?;
        let q0 = centered_quadratic(x, &self.centers[0], &self.metrics[0]);
        let q1 = centered_quadratic(x, &self.centers[1], &self.metrics[1]);
        Ok(q0
            .iter()
            .zip(&q1)
            .map(|(a, b)| self.kappa - 0.5 * a + 0.5 * b)
            .collect())
    }

    /// Exact mean and variance of W(x) for x ~ N(mean, cov).
    pub fn moments(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> (f64, f64) {
        let (a0, a1) = (self.metrics[0].as_ref(), self.metrics[1].as_ref());
        let d0 = mean - self.centers[0].as_ref();
        let d1 = mean - self.centers[1].as_ref();
        let m = self.kappa - 0.5 * (quad_form(&d0, a0) + trace_product(a0, cov))
            + 0.5 * (quad_form(&d1, a1) + trace_product(a1, cov));
        let diff = a1 - a0;
        let ds = &diff * cov;
        let g = a1 * &d1 - a0 * &d0;
        let v = 0.5 * trace_product(&ds, &ds) + quad_form(&g, cov);
        (m, v)
    }
}

fn check_cols(x: &DMatrix<f64>, p: usize) -> Result<()> {
    if x.ncols() != p {
        return Err(RqdaError::DimensionMismatch {
            expected: p,
            got: x.ncols(),
            context: "feature count of scored rows".into(),
        });
    }
    Ok(())
}

/// (x_l − a)ᵀ A (x_l − a) for every row x_l.
fn centered_quadratic(x: &DMatrix<f64>, a: &DVector<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    let mut d = x.clone();
    for mut row in d.row_iter_mut() {
        row -= a.transpose();
    }
    let dm = &d * m;
    dm.row_iter().zip(d.row_iter()).map(|(u, v)| u.dot(&v)).collect()
}

pub fn qda_score_true(x: &DVector<f64>, model: &MixtureModel) -> Result<Score> {
    Ok(QuadraticRule::true_qda(model)?.score(x))
}

pub fn rqda_score(x: &DVector<f64>, fit: &FittedStats, priors: &Priors) -> Result<Score> {
    Ok(QuadraticRule::standard(fit, priors)?.score(x))
}

pub fn improved_score(x: &DVector<f64>, fit: &FittedStats, theta: f64) -> Score {
    QuadraticRule::improved(fit, theta).score(x)
}

/// Pooled-covariance statistics for the R-LDA baseline.
#[derive(Clone, Debug)]
pub struct PooledFit {
    pub mean0: DVector<f64>,
    pub mean1: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub resolvent: Resolvent,
}

/// Σ̂ = ((n₀−1)Σ̂₀ + (n₁−1)Σ̂₁)/(n−2), H = (I + γΣ̂)⁻¹.
pub fn fit_pooled(m0: &ClassMoments, m1: &ClassMoments, gamma: f64) -> Result<PooledFit> {
    let w0 = (m0.n - 1) as f64;
    let w1 = (m1.n - 1) as f64;
    let covariance = (&m0.covariance * w0 + &m1.covariance * w1) / (w0 + w1);
    let resolvent = regularized_resolvent(&covariance, gamma)?;
    Ok(PooledFit {
        mean0: m0.mean.clone(),
        mean1: m1.mean.clone(),
        covariance,
        resolvent,
    })
}

/// W(x) = wᵀx + b.
#[derive(Clone, Debug)]
pub struct LinearRule {
    pub weights: DVector<f64>,
    pub bias: f64,
}

impl LinearRule {
    pub fn rlda(pooled: &PooledFit, priors: &Priors) -> Self {
        let diff = &pooled.mean0 - &pooled.mean1;
        let weights = &pooled.resolvent.matrix * &diff;
        let mid = &pooled.mean0 + &pooled.mean1;
        let bias = -0.5 * mid.dot(&weights) - priors.log_ratio();
        Self { weights, bias }
    }

    pub fn score(&self, x: &DVector<f64>) -> Score {
        Score {
            value: self.weights.dot(x) + self.bias,
            rule_kind: RuleKind::Rlda,
        }
    }

    pub fn score_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_cols(x, self.weights.len())?;
        Ok((x * &self.weights).iter().map(|v| v + self.bias).collect())
    }
}

pub fn rlda_score(x: &DVector<f64>, pooled: &PooledFit, priors: &Priors) -> Score {
    LinearRule::rlda(pooled, priors).score(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub eps0: f64,
    pub eps1: f64,
    pub total: f64,
    pub n_test0: usize,
    pub n_test1: usize,
}

/// Misclassification rates from the scores of class-0 and class-1 test points.
pub fn empirical_error(scores0: &[f64], scores1: &[f64], priors: &Priors) -> Result<ErrorReport> {
    if scores0.is_empty() || scores1.is_empty() {
        return Err(RqdaError::InsufficientSamples {
            needed: 1,
            got: 0,
            context: "test points per class".into(),
        });
    }
    let wrong0 = scores0.iter().filter(|&&s| classify_value(s) != 0).count();
    let wrong1 = scores1.iter().filter(|&&s| classify_value(s) != 1).count();
    let eps0 = wrong0 as f64 / scores0.len() as f64;
    let eps1 = wrong1 as f64 / scores1.len() as f64;
    Ok(ErrorReport {
        eps0,
        eps1,
        total: priors.pi0 * eps0 + priors.pi1 * eps1,
        n_test0: scores0.len(),
        n_test1: scores1.len(),
    })
}

/// Conditional mean and variance (given the training data) of the normalized
/// score for test points of each class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreMoments {
    pub mean: [f64; 2],
    pub variance: [f64; 2],
    pub scale: f64,
}

/// Improved rule: moments of (2/√p)W at bias θ. Standard rule and the true
/// QDA: moments of (1/√p)W with the model priors (θ ignored).
pub fn conditional_score_moments(
    fit: &FittedStats,
    model: &MixtureModel,
    theta: f64,
    kind: RuleKind,
) -> Result<ScoreMoments> {
    let rule = match kind {
        RuleKind::ImprovedRqda => QuadraticRule::improved(fit, theta),
        RuleKind::StandardRqda => QuadraticRule::standard(fit, &model.priors)?,
        RuleKind::TrueQda => QuadraticRule::true_qda(model)?,
        RuleKind::Rlda => {
            return Err(RqdaError::InvalidInput(
                "conditional moments are defined for the quadratic rules".into(),
            ))
        }
    };
    if rule.dim() != model.dim() {
        return Err(RqdaError::DimensionMismatch {
            expected: model.dim(),
            got: rule.dim(),
            context: "fitted statistics vs model".into(),
        });
    }
    let scale = kind.moment_scale(model.dim());
    let mut mean = [0.0; 2];
    let mut variance = [0.0; 2];
    for i in 0..2 {
        let c = model.class(i);
        let (m, v) = rule.moments(c.mean(), c.covariance());
        mean[i] = scale * m;
        variance[i] = scale * scale * v;
    }
    Ok(ScoreMoments {
        mean,
        variance,
        scale,
    })
}
