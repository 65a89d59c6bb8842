//! Consistent estimates of the design quantities and of the error rate that
//! use the training data alone.
//!
//! The unbiased Σ̂ᵢ has nᵢ − 1 degrees of freedom; every place where the
//! asymptotic formulas use a class count, the estimators use mᵢ = nᵢ − 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RqdaError};
use crate::estimation::{regularized_resolvent, ClassMoments, FittedStats};
use crate::linalg::{normal_cdf, quad_form, trace_product};
use crate::model::Priors;
use crate::rmt::optimal_bias;

/// Whether to keep the O(1/√p) contribution of the sample-mean noise to the
/// score mean. It vanishes asymptotically but is visible at p in the hundreds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanCorrection {
    #[default]
    FiniteSample,
    Asymptotic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GOptions {
    pub mean_correction: MeanCorrection,
}

/// δ̂ = (1/γ)(p/n − Tr[H]/n) / (1 − p/n + Tr[H]/n).
pub fn delta_hat(h: &DMatrix<f64>, n: usize, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(RqdaError::InvalidRegularizer(format!(
            "δ̂ needs γ > 0, got {gamma}"
        )));
    }
    if n == 0 {
        return Err(RqdaError::InsufficientSamples {
            needed: 1,
            got: 0,
            context: "δ̂ degrees of freedom".into(),
        });
    }
    let nf = n as f64;
    let ratio = h.nrows() as f64 / nf;
    let tr = h.trace() / nf;
    let denom = 1.0 - ratio + tr;
    if !(denom > 0.0) {
        return Err(RqdaError::DegenerateEstimate(format!(
            "δ̂ denominator 1 − p/n + Tr[H]/n = {denom:e}"
        )));
    }
    Ok((ratio - tr) / (gamma * denom))
}

/// γ̂₁ = γ₀ / (1 − γ₀(m₀/m₁·δ̂₀ − δ̂₀)).
pub fn gamma1_from_delta_hat(delta0: f64, m0: usize, m1: usize, gamma0: f64) -> Result<f64> {
    let denom = 1.0 - gamma0 * (m0 as f64 / m1 as f64 * delta0 - delta0);
    if !(denom > 0.0) {
        return Err(RqdaError::InvalidRegularizer(format!(
            "γ̂₁ denominator {denom:e} is not positive"
        )));
    }
    Ok(gamma0 / denom)
}

/// Estimated second regularizer from the class-0 statistics and the class-1 count.
pub fn gamma1_hat(class0: &ClassMoments, n1: usize, gamma0: f64) -> Result<f64> {
    if n1 < 2 {
        return Err(RqdaError::InsufficientSamples {
            needed: 2,
            got: n1,
            context: "class 1 count".into(),
        });
    }
    let h0 = regularized_resolvent(&class0.covariance, gamma0)?;
    let d0 = delta_hat(&h0.matrix, class0.dof(), gamma0)?;
    gamma1_from_delta_hat(d0, class0.dof(), n1 - 1, gamma0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaHat {
    pub theta_hat: f64,
    pub beta_hat0: f64,
    pub beta_hat1: f64,
    pub alpha_hat: f64,
    #[serde(rename = "B_hat0")]
    pub big_b_hat0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GEstimate {
    pub gamma0: f64,
    pub delta_hat0: f64,
    pub delta_hat1: f64,
    pub gamma1_hat: f64,
    pub beta_hat0: f64,
    pub beta_hat1: f64,
    pub alpha_hat: f64,
    #[serde(rename = "B_hat0")]
    pub big_b_hat0: f64,
    #[serde(rename = "B_hat1")]
    pub big_b_hat1: f64,
    pub theta_hat: f64,
    /// Bias at which the error is evaluated.
    pub theta: f64,
    pub xi_hat0: f64,
    pub xi_hat1: f64,
    pub b_hat0: f64,
    pub b_hat1: f64,
    pub r_hat0: f64,
    pub r_hat1: f64,
    pub eps_hat0: f64,
    pub eps_hat1: f64,
    pub total_hat: f64,
}

impl GEstimate {
    pub fn eps_hat(&self, i: usize) -> f64 {
        if i == 0 {
            self.eps_hat0
        } else {
            self.eps_hat1
        }
    }

    pub fn delta_hat(&self, i: usize) -> f64 {
        if i == 0 {
            self.delta_hat0
        } else {
            self.delta_hat1
        }
    }
}

/// Products and traces shared by θ̂ and the error estimate.
struct Workspace<'a> {
    fit: &'a FittedStats,
    p: f64,
    sp: f64,
    n: [f64; 2],
    m: [f64; 2],
    gamma: [f64; 2],
    delta: [f64; 2],
    /// sh[i][j] = Σ̂ᵢHⱼ
    sh: [[DMatrix<f64>; 2]; 2],
    /// Hⱼ(μ̂₀ − μ̂₁)
    h_dm: [DVector<f64>; 2],
    /// (μ̂₀ − μ̂₁)ᵀHⱼ(μ̂₀ − μ̂₁)
    dm_h_dm: [f64; 2],
}

impl<'a> Workspace<'a> {
    fn new(fit: &'a FittedStats) -> Result<Self> {
        let p = fit.dim();
        let n = [fit.class0.n as f64, fit.class1.n as f64];
        let dof = [fit.class0.dof(), fit.class1.dof()];
        let gamma = [fit.gamma0(), fit.gamma1()];
        let delta = [
            delta_hat(&fit.h0.matrix, dof[0], gamma[0])?,
            delta_hat(&fit.h1.matrix, dof[1], gamma[1])?,
        ];
        let h = [&fit.h0.matrix, &fit.h1.matrix];
        let s = [&fit.class0.covariance, &fit.class1.covariance];
        let sh = [[s[0] * h[0], s[0] * h[1]], [s[1] * h[0], s[1] * h[1]]];
        let dm = &fit.class0.mean - &fit.class1.mean;
        let h_dm = [h[0] * &dm, h[1] * &dm];
        let dm_h_dm = [h_dm[0].dot(&dm), h_dm[1].dot(&dm)];
        Ok(Self {
            fit,
            p: p as f64,
            sp: (p as f64).sqrt(),
            n,
            m: [dof[0] as f64, dof[1] as f64],
            gamma,
            delta,
            sh,
            h_dm,
            dm_h_dm,
        })
    }

    /// (1/√p)(1/nᵢ)[mᵢδ̂ᵢ + Tr Σ̂ᵢHⱼ]
    fn correction(&self, opts: &GOptions) -> [f64; 2] {
        match opts.mean_correction {
            MeanCorrection::Asymptotic => [0.0; 2],
            MeanCorrection::FiniteSample => {
                let c = |i: usize| {
                    let j = 1 - i;
                    (self.m[i] * self.delta[i] + self.sh[i][j].trace()) / self.n[i] / self.sp
                };
                [c(0), c(1)]
            }
        }
    }

    fn betas(&self, opts: &GOptions) -> [f64; 2] {
        let c = self.correction(opts);
        let beta = |i: usize| {
            let j = 1 - i;
            -self.dm_h_dm[j] / self.sp - self.sh[i][j].trace() / self.sp
                + self.m[i] * self.delta[i] / self.sp
                + c[i]
        };
        [beta(0), beta(1)]
    }

    fn big_b(&self, i: usize) -> f64 {
        let j = 1 - i;
        let (p, m, d) = (self.p, self.m[i], self.delta[i]);
        let psi = 1.0 + self.gamma[i] * d;
        let psi2 = psi * psi;
        let sii = &self.sh[i][i];
        let sij = &self.sh[i][j];
        let tr_ij = sij.trace();
        psi2 * psi2 * trace_product(sii, sii) / p - m / p * d * d * psi2 + trace_product(sij, sij) / p
            - m / p * (tr_ij / m).powi(2)
            - 2.0 * psi2 * trace_product(sii, sij) / p
            + d * psi * 2.0 / p * tr_ij
    }

    fn r(&self, i: usize) -> f64 {
        let j = 1 - i;
        quad_form(&self.h_dm[j], &self.fit.moments(i).covariance) / self.p
    }

    fn theta_hat(&self, priors: &Priors, opts: &GOptions) -> Result<ThetaHat> {
        let [beta_hat0, beta_hat1] = self.betas(opts);
        let big_b_hat0 = self.big_b(0);
        if !(big_b_hat0 > 0.0) {
            return Err(RqdaError::DegenerateDesign(format!("B̂₀ = {big_b_hat0:e}")));
        }
        let alpha_hat = (2.0 * big_b_hat0).sqrt();
        let theta_hat = optimal_bias(beta_hat0, beta_hat1, alpha_hat, priors)?;
        Ok(ThetaHat {
            theta_hat,
            beta_hat0,
            beta_hat1,
            alpha_hat,
            big_b_hat0,
        })
    }

    fn estimate(&self, theta: f64, priors: &Priors, opts: &GOptions) -> Result<GEstimate> {
        let th = self.theta_hat(priors, opts)?;
        let c = self.correction(opts);
        let mut xi = [0.0; 2];
        let mut b = [0.0; 2];
        let mut r = [0.0; 2];
        let mut big_b = [0.0; 2];
        let mut eps = [0.0; 2];
        for i in 0..2 {
            let j = 1 - i;
            let sign = if i == 0 { 1.0 } else { -1.0 };
            xi[i] = theta - sign * self.dm_h_dm[j] / self.sp;
            b[i] = sign * self.sh[i][j].trace() / self.sp
                - sign * self.m[i] * self.delta[i] / self.sp
                - sign * c[i];
            r[i] = self.r(i);
            big_b[i] = self.big_b(i);
            let var = 2.0 * big_b[i] + 4.0 * r[i];
            if !(var > 0.0) {
                return Err(RqdaError::DegenerateEstimate(format!(
                    "class {i}: 2B̂ + 4r̂ = {var:e}"
                )));
            }
            eps[i] = normal_cdf(sign * (xi[i] - b[i]) / var.sqrt());
        }
        Ok(GEstimate {
            gamma0: self.gamma[0],
            delta_hat0: self.delta[0],
            delta_hat1: self.delta[1],
            gamma1_hat: self.gamma[1],
            beta_hat0: th.beta_hat0,
            beta_hat1: th.beta_hat1,
            alpha_hat: th.alpha_hat,
            big_b_hat0: big_b[0],
            big_b_hat1: big_b[1],
            theta_hat: th.theta_hat,
            theta,
            xi_hat0: xi[0],
            xi_hat1: xi[1],
            b_hat0: b[0],
            b_hat1: b[1],
            r_hat0: r[0],
            r_hat1: r[1],
            eps_hat0: eps[0],
            eps_hat1: eps[1],
            total_hat: priors.pi0 * eps[0] + priors.pi1 * eps[1],
        })
    }
}

/// θ̂* with its components; `fit` must carry γ̂₁ as its second regularizer.
pub fn theta_hat(fit: &FittedStats, priors: &Priors, opts: &GOptions) -> Result<ThetaHat> {
    Workspace::new(fit)?.theta_hat(priors, opts)
}

/// Estimated per-class and total error of the improved rule at bias `theta`.
pub fn g_estimator_error(
    fit: &FittedStats,
    theta: f64,
    priors: &Priors,
    opts: &GOptions,
) -> Result<GEstimate> {
    Workspace::new(fit)?.estimate(theta, priors, opts)
}

/// γ̂₁, the fitted statistics and the estimate at θ = θ̂* for a given γ₀.
/// Class 0 is expected to be the minority.
pub fn design_from_moments(
    class0: &ClassMoments,
    class1: &ClassMoments,
    gamma0: f64,
    priors: &Priors,
    opts: &GOptions,
) -> Result<(FittedStats, GEstimate)> {
    if !(gamma0 > 0.0) || !gamma0.is_finite() {
        return Err(RqdaError::InvalidRegularizer(format!(
            "γ₀ = {gamma0} must be positive"
        )));
    }
    if class1.n < 2 {
        return Err(RqdaError::InsufficientSamples {
            needed: 2,
            got: class1.n,
            context: "class 1 count".into(),
        });
    }
    let h0 = regularized_resolvent(&class0.covariance, gamma0)?;
    let d0 = delta_hat(&h0.matrix, class0.dof(), gamma0)?;
    let g1 = gamma1_from_delta_hat(d0, class0.dof(), class1.dof(), gamma0)?;
    let fit = FittedStats {
        h1: regularized_resolvent(&class1.covariance, g1)?,
        h0,
        class0: class0.clone(),
        class1: class1.clone(),
    };
    let ws = Workspace::new(&fit)?;
    let theta = ws.theta_hat(priors, opts)?.theta_hat;
    let est = ws.estimate(theta, priors, opts)?;
    Ok((fit, est))
}
