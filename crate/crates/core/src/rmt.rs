//! Deterministic equivalents and the large-dimensional error approximation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RqdaError};
use crate::linalg::{normal_cdf, quad_form, spd_inverse_logdet, symmetrize, trace_product};
use crate::model::{MixtureModel, Priors};

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointOptions {
    pub damping: f64,
    /// Stop when |F(δ) − δ| ≤ tol·max(1, δ).
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point; (1/n)Tr[Σ] when absent.
    pub init: Option<f64>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-12,
            max_iter: 10_000,
            init: None,
        }
    }
}

fn check_fixed_point_args(n: usize, gamma: f64) -> Result<()> {
    if n == 0 {
        return Err(RqdaError::InvalidInput("sample count must be positive".into()));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(RqdaError::InvalidRegularizer(format!(
            "γ = {gamma} must be finite and nonnegative"
        )));
    }
    Ok(())
}

fn damped_iteration<F: Fn(f64) -> f64>(map: F, init: f64, opts: &FixedPointOptions) -> Result<(f64, usize)> {
    let w = opts.damping;
    let mut delta = init;
    let mut recent = Vec::with_capacity(8);
    for it in 0..opts.max_iter {
        let next = map(delta);
        let residual = (next - delta).abs();
        if !next.is_finite() {
            break;
        }
        if residual <= opts.tol * delta.abs().max(1.0) {
            return Ok((next, it + 1));
        }
        if recent.len() == 8 {
            recent.remove(0);
        }
        recent.push(residual);
        delta = (1.0 - w) * delta + w * next;
    }
    Err(RqdaError::Convergence {
        iterations: opts.max_iter,
        residual: recent.last().copied().unwrap_or(f64::NAN),
        trace: recent,
    })
}

/// δ from the spectrum of Σ: δ = (1/n)Σ_k λ_k / (1 + γλ_k/(1+γδ)).
pub fn eigen_delta_solver(eigenvalues: &[f64], n: usize, gamma: f64) -> Result<f64> {
    eigen_delta_solver_with(eigenvalues, n, gamma, &FixedPointOptions::default())
}

pub fn eigen_delta_solver_with(
    eigenvalues: &[f64],
    n: usize,
    gamma: f64,
    opts: &FixedPointOptions,
) -> Result<f64> {
    check_fixed_point_args(n, gamma)?;
    let nf = n as f64;
    let map = |d: f64| {
        let c = gamma / (1.0 + gamma * d);
        eigenvalues.iter().map(|l| l / (1.0 + c * l)).sum::<f64>() / nf
    };
    let init = opts.init.unwrap_or_else(|| eigenvalues.iter().sum::<f64>() / nf);
    damped_iteration(map, init, opts).map(|(d, _)| d)
}

/// Scalar equivalents of one class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEquivalents {
    pub delta: f64,
    /// (1/n)Tr[Σ²T²]
    pub phi: f64,
    /// 1/(1+γδ)²
    pub phi_tilde: f64,
    pub gamma: f64,
    pub n: usize,
}

impl ClassEquivalents {
    /// γ/(1+γδ), the effective shrinkage inside T.
    pub fn effective_gamma(&self) -> f64 {
        self.gamma / (1.0 + self.gamma * self.delta)
    }

    /// 1 − γ²φφ̃
    pub fn stability_margin(&self) -> f64 {
        1.0 - self.gamma * self.gamma * self.phi * self.phi_tilde
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeterministicEquivalents {
    pub delta: f64,
    pub phi: f64,
    pub phi_tilde: f64,
    pub gamma: f64,
    pub n: usize,
    /// T = (I + γ/(1+γδ)·Σ)⁻¹
    pub t: DMatrix<f64>,
    pub iterations: usize,
}

impl DeterministicEquivalents {
    pub fn scalars(&self) -> ClassEquivalents {
        ClassEquivalents {
            delta: self.delta,
            phi: self.phi,
            phi_tilde: self.phi_tilde,
            gamma: self.gamma,
            n: self.n,
        }
    }
}

pub fn solve_delta(sigma: &DMatrix<f64>, n: usize, gamma: f64) -> Result<DeterministicEquivalents> {
    solve_delta_with(sigma, n, gamma, &FixedPointOptions::default())
}

/// Dense form: iterates on the spectrum of Σ, then assembles T in its eigenbasis.
pub fn solve_delta_with(
    sigma: &DMatrix<f64>,
    n: usize,
    gamma: f64,
    opts: &FixedPointOptions,
) -> Result<DeterministicEquivalents> {
    check_fixed_point_args(n, gamma)?;
    if !sigma.is_square() {
        return Err(RqdaError::DimensionMismatch {
            expected: sigma.nrows(),
            got: sigma.ncols(),
            context: "Σ must be square".into(),
        });
    }
    let nf = n as f64;
    let eig = sigma.clone().symmetric_eigen();
    if let Some(l) = eig.eigenvalues.iter().find(|l| !(**l > 0.0)) {
        return Err(RqdaError::NotPositiveDefinite(format!("Σ has eigenvalue {l:e}")));
    }
    let lambda: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let map = |d: f64| {
        let c = gamma / (1.0 + gamma * d);
        lambda.iter().map(|l| l / (1.0 + c * l)).sum::<f64>() / nf
    };
    let init = opts.init.unwrap_or_else(|| sigma.trace() / nf);
    let (delta, iterations) = damped_iteration(map, init, opts)?;
    let c = gamma / (1.0 + gamma * delta);
    let tk: Vec<f64> = lambda.iter().map(|l| 1.0 / (1.0 + c * l)).collect();
    let phi = lambda.iter().zip(&tk).map(|(l, t)| (l * t).powi(2)).sum::<f64>() / nf;
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (mut col, t) in scaled.column_iter_mut().zip(&tk) {
        col *= *t;
    }
    let mut t = scaled * v.transpose();
    symmetrize(&mut t);
    Ok(DeterministicEquivalents {
        delta,
        phi,
        phi_tilde: 1.0 / (1.0 + gamma * delta).powi(2),
        gamma,
        n,
        t,
        iterations,
    })
}

fn class_equivalents(eigs: &[f64], n: usize, gamma: f64) -> Result<ClassEquivalents> {
    let delta = eigen_delta_solver(eigs, n, gamma)?;
    let c = gamma / (1.0 + gamma * delta);
    let phi = eigs
        .iter()
        .map(|l| {
            let t = 1.0 / (1.0 + c * l);
            l * l * t * t
        })
        .sum::<f64>()
        / n as f64;
    Ok(ClassEquivalents {
        delta,
        phi,
        phi_tilde: 1.0 / (1.0 + gamma * delta).powi(2),
        gamma,
        n,
    })
}

/// (2nᵢ/p)γᵢ²φ̃ᵢφᵢ²/(1−γᵢ²φᵢφ̃ᵢ); only used as a cross-check of B̄ᵢ.
pub fn simplified_b_bar(eq: &ClassEquivalents, p: usize) -> f64 {
    2.0 * eq.n as f64 / p as f64 * eq.gamma * eq.gamma * eq.phi_tilde * eq.phi * eq.phi
        / eq.stability_margin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticError {
    pub xi_bar: [f64; 2],
    pub b_bar: [f64; 2],
    /// B̄ᵢ
    pub big_b_bar: [f64; 2],
    pub r_bar: [f64; 2],
    pub eps: [f64; 2],
    pub total: f64,
    pub equivalents: [ClassEquivalents; 2],
}

/// θ* and the quantities of the bias objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaDesign {
    pub theta_star: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub alpha: f64,
}

/// π₀Φ((β₀+θ)/α) + π₁Φ((β₁−θ)/α)
pub fn bias_objective(theta: f64, beta0: f64, beta1: f64, alpha: f64, priors: &Priors) -> f64 {
    priors.pi0 * normal_cdf((beta0 + theta) / alpha) + priors.pi1 * normal_cdf((beta1 - theta) / alpha)
}

/// Log-ratio of the two terms of the objective's derivative; zero at the optimum.
pub fn stationarity_residual(theta: f64, beta0: f64, beta1: f64, alpha: f64, priors: &Priors) -> f64 {
    (priors.pi0 / priors.pi1).ln()
        + ((beta1 - theta).powi(2) - (beta0 + theta).powi(2)) / (2.0 * alpha * alpha)
}

/// Stationary point of [`bias_objective`].
pub fn optimal_bias(beta0: f64, beta1: f64, alpha: f64, priors: &Priors) -> Result<f64> {
    let centre = 0.5 * (beta1 - beta0);
    let log_ratio = priors.log_ratio();
    if log_ratio == 0.0 {
        return Ok(centre);
    }
    let sum = beta0 + beta1;
    let scale = beta0.abs().max(beta1.abs()).max(1.0);
    if !(sum.abs() > 1e-12 * scale) {
        return Err(RqdaError::DegenerateDesign(format!(
            "β₀ + β₁ = {sum:e} with unequal priors"
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(RqdaError::DegenerateDesign(format!(
            "α = {alpha} must be positive"
        )));
    }
    Ok(centre - alpha * alpha * log_ratio / sum)
}

/// Trace functionals needed by the error formula; indexed [i][j] for Σᵢ, Tⱼ.
#[derive(Clone, Debug)]
struct Functionals {
    /// μᵀTⱼμ
    mu_t_mu: [f64; 2],
    /// Tr[ΣᵢTⱼ]
    tr_s_t: [[f64; 2]; 2],
    /// Tr[Σᵢ²Tⱼ²]
    tr_s2_t2: [[f64; 2]; 2],
    /// Tr[ΣᵢT₁ΣᵢT₀]
    tr_s_t1_s_t0: [f64; 2],
    /// Tr[ΣᵢΣⱼTⱼ²], j = 1−i
    tr_si_sj_tj2: [f64; 2],
    /// μᵀΣⱼTⱼ²μ
    mu_s_t2_mu: [f64; 2],
}

#[derive(Clone, Debug)]
enum Basis {
    /// Common eigenvectors; per-class eigenvalues and rotated μ₁−μ₀.
    Eigen { lambda: [Vec<f64>; 2], mu: Vec<f64> },
    Dense {
        sigma: [DMatrix<f64>; 2],
        lambda: [Vec<f64>; 2],
        mu: DVector<f64>,
    },
}

/// Precomputed spectral data of a mixture for repeated theory evaluations.
#[derive(Clone, Debug)]
pub struct TheoryContext {
    p: usize,
    priors: Priors,
    basis: Basis,
}

const COMMUTE_TOL: f64 = 1e-10;

impl TheoryContext {
    /// Eigen path when the covariances commute, dense otherwise.
    pub fn new(model: &MixtureModel) -> Result<Self> {
        match Self::eigen(model) {
            Ok(ctx) => Ok(ctx),
            Err(RqdaError::InvalidInput(_)) => Ok(Self::dense(model)),
            Err(e) => Err(e),
        }
    }

    pub fn eigen(model: &MixtureModel) -> Result<Self> {
        let s0 = model.class0.covariance();
        let s1 = model.class1.covariance();
        let scale = s0.norm() * s1.norm();
        let commutator = s0 * s1 - s1 * s0;
        if commutator.norm() > COMMUTE_TOL * scale.max(1.0) {
            return Err(RqdaError::InvalidInput("covariances do not commute".into()));
        }
        // a generic combination separates the joint eigenspaces
        let combo = s0 + s1 * std::f64::consts::FRAC_1_SQRT_2;
        let eig = combo.symmetric_eigen();
        let q = eig.eigenvectors;
        let qt = q.transpose();
        let mut lambda: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (i, s) in [s0, s1].into_iter().enumerate() {
            let d = &qt * s * &q;
            let off = {
                let mut m = d.clone();
                m.fill_diagonal(0.0);
                m.amax()
            };
            if off > 1e-9 * d.amax().max(1.0) {
                return Err(RqdaError::InvalidInput(
                    "joint eigenbasis does not diagonalize both covariances".into(),
                ));
            }
            lambda[i] = d.diagonal().iter().copied().collect();
        }
        let mu = (&qt * model.mean_difference()).iter().copied().collect();
        Ok(Self {
            p: model.dim(),
            priors: model.priors,
            basis: Basis::Eigen { lambda, mu },
        })
    }

    pub fn dense(model: &MixtureModel) -> Self {
        let sigma = [
            model.class0.covariance().clone(),
            model.class1.covariance().clone(),
        ];
        let lambda = [
            sigma[0].clone().symmetric_eigenvalues().iter().copied().collect(),
            sigma[1].clone().symmetric_eigenvalues().iter().copied().collect(),
        ];
        Self {
            p: model.dim(),
            priors: model.priors,
            basis: Basis::Dense {
                sigma,
                lambda,
                mu: model.mean_difference(),
            },
        }
    }

    pub fn uses_eigenbasis(&self) -> bool {
        matches!(self.basis, Basis::Eigen { .. })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn priors(&self) -> Priors {
        self.priors
    }

    fn eigenvalues(&self, i: usize) -> &[f64] {
        match &self.basis {
            Basis::Eigen { lambda, .. } | Basis::Dense { lambda, .. } => &lambda[i],
        }
    }

    pub fn equivalents(&self, i: usize, n: usize, gamma: f64) -> Result<ClassEquivalents> {
        class_equivalents(self.eigenvalues(i), n, gamma)
    }

    #[allow(clippy::needless_range_loop)]
    fn functionals(&self, eq: &[ClassEquivalents; 2]) -> Result<Functionals> {
        let c = [eq[0].effective_gamma(), eq[1].effective_gamma()];
        match &self.basis {
            Basis::Eigen { lambda, mu } => {
                let mut f = Functionals {
                    mu_t_mu: [0.0; 2],
                    tr_s_t: [[0.0; 2]; 2],
                    tr_s2_t2: [[0.0; 2]; 2],
                    tr_s_t1_s_t0: [0.0; 2],
                    tr_si_sj_tj2: [0.0; 2],
                    mu_s_t2_mu: [0.0; 2],
                };
                for k in 0..self.p {
                    let l = [lambda[0][k], lambda[1][k]];
                    let t = [1.0 / (1.0 + c[0] * l[0]), 1.0 / (1.0 + c[1] * l[1])];
                    let m2 = mu[k] * mu[k];
                    for i in 0..2 {
                        let j = 1 - i;
                        f.mu_t_mu[i] += m2 * t[i];
                        f.mu_s_t2_mu[i] += m2 * l[i] * t[i] * t[i];
                        f.tr_s_t1_s_t0[i] += l[i] * l[i] * t[1] * t[0];
                        f.tr_si_sj_tj2[i] += l[i] * l[j] * t[j] * t[j];
                        for jj in 0..2 {
                            f.tr_s_t[i][jj] += l[i] * t[jj];
                            f.tr_s2_t2[i][jj] += l[i] * l[i] * t[jj] * t[jj];
                        }
                    }
                }
                Ok(f)
            }
            Basis::Dense { sigma, mu, .. } => {
                let p = self.p;
                let id = DMatrix::<f64>::identity(p, p);
                let mut t = Vec::with_capacity(2);
                for j in 0..2 {
                    let (mut tj, _) = spd_inverse_logdet(&(&id + &sigma[j] * c[j]), "I + cΣ")?;
                    symmetrize(&mut tj);
                    t.push(tj);
                }
                // prod[i][j] = Σᵢ Tⱼ
                let prod: Vec<Vec<DMatrix<f64>>> = (0..2)
                    .map(|i| (0..2).map(|j| &sigma[i] * &t[j]).collect())
                    .collect();
                let mut f = Functionals {
                    mu_t_mu: [0.0; 2],
                    tr_s_t: [[0.0; 2]; 2],
                    tr_s2_t2: [[0.0; 2]; 2],
                    tr_s_t1_s_t0: [0.0; 2],
                    tr_si_sj_tj2: [0.0; 2],
                    mu_s_t2_mu: [0.0; 2],
                };
                for i in 0..2 {
                    let j = 1 - i;
                    f.mu_t_mu[i] = quad_form(mu, &t[i]);
                    let v = &t[i] * mu;
                    f.mu_s_t2_mu[i] = quad_form(&v, &sigma[i]);
                    f.tr_s_t1_s_t0[i] = trace_product(&prod[i][1], &prod[i][0]);
                    // Tr[Σᵢ Tⱼ Σⱼ Tⱼ]
                    f.tr_si_sj_tj2[i] = trace_product(&prod[i][j], &prod[j][j]);
                    for jj in 0..2 {
                        f.tr_s_t[i][jj] = prod[i][jj].trace();
                        let pt = prod[i][jj].transpose();
                        f.tr_s2_t2[i][jj] = trace_product(&prod[i][jj], &pt);
                    }
                }
                Ok(f)
            }
        }
    }

    fn stable_equivalents(&self, n: [usize; 2], gamma: [f64; 2]) -> Result<[ClassEquivalents; 2]> {
        let eq = [
            self.equivalents(0, n[0], gamma[0])?,
            self.equivalents(1, n[1], gamma[1])?,
        ];
        for (i, e) in eq.iter().enumerate() {
            let margin = e.stability_margin();
            if !(margin > 0.0) {
                return Err(RqdaError::DivergedEquivalent { class: i, margin });
            }
        }
        Ok(eq)
    }

    fn big_b_bar(&self, i: usize, eq: &[ClassEquivalents; 2], f: &Functionals) -> f64 {
        let j = 1 - i;
        let p = self.p as f64;
        let (ei, ej) = (&eq[i], &eq[j]);
        let nj = ej.n as f64;
        ei.n as f64 / p * ei.phi / ei.stability_margin() + f.tr_s2_t2[i][j] / p - 2.0 / p * f.tr_s_t1_s_t0[i]
            + nj / p * ej.gamma * ej.gamma * ej.phi_tilde / ej.stability_margin()
                * (f.tr_si_sj_tj2[i] / nj).powi(2)
    }

    pub fn asymptotic_error(
        &self,
        n0: usize,
        n1: usize,
        gamma0: f64,
        gamma1: f64,
        theta: f64,
    ) -> Result<AsymptoticError> {
        let eq = self.stable_equivalents([n0, n1], [gamma0, gamma1])?;
        let f = self.functionals(&eq)?;
        let sp = (self.p as f64).sqrt();
        let p = self.p as f64;
        let mut out = AsymptoticError {
            xi_bar: [0.0; 2],
            b_bar: [0.0; 2],
            big_b_bar: [0.0; 2],
            r_bar: [0.0; 2],
            eps: [0.0; 2],
            total: 0.0,
            equivalents: eq,
        };
        for i in 0..2 {
            let j = 1 - i;
            let sign = if i == 0 { -1.0 } else { 1.0 };
            out.xi_bar[i] = sign * f.mu_t_mu[j] / sp + theta;
            out.b_bar[i] = (f.tr_s_t[i][1] - f.tr_s_t[i][0]) / sp;
            out.big_b_bar[i] = self.big_b_bar(i, &eq, &f);
            out.r_bar[i] = f.mu_s_t2_mu[j] / p / eq[j].stability_margin();
            let var = 2.0 * out.big_b_bar[i] + 4.0 * out.r_bar[i];
            if !(var > 0.0) {
                return Err(RqdaError::DegenerateEstimate(format!(
                    "class {i}: 2B̄ + 4r̄ = {var:e}"
                )));
            }
            out.eps[i] = normal_cdf(-sign * (out.xi_bar[i] - out.b_bar[i]) / var.sqrt());
        }
        out.total = self.priors.pi0 * out.eps[0] + self.priors.pi1 * out.eps[1];
        Ok(out)
    }

    /// γ₁ = γ₀ / (1 − (1/n₁ − 1/n₀)·γ₀·n₀δ₀).
    pub fn gamma1_design(&self, n0: usize, n1: usize, gamma0: f64) -> Result<f64> {
        gamma1_from_delta(self.equivalents(0, n0, gamma0)?.delta, n0, n1, gamma0)
    }

    pub fn theta_design(&self, n0: usize, n1: usize, gamma0: f64, gamma1: f64) -> Result<ThetaDesign> {
        let eq = self.stable_equivalents([n0, n1], [gamma0, gamma1])?;
        let f = self.functionals(&eq)?;
        let sp = (self.p as f64).sqrt();
        let b0 = (f.tr_s_t[0][1] - f.tr_s_t[0][0]) / sp;
        let b1 = (f.tr_s_t[1][1] - f.tr_s_t[1][0]) / sp;
        let beta0 = -f.mu_t_mu[1] / sp - b0;
        let beta1 = -f.mu_t_mu[0] / sp + b1;
        let big_b0 = self.big_b_bar(0, &eq, &f);
        if !(big_b0 > 0.0) {
            return Err(RqdaError::DegenerateDesign(format!("B̄₀ = {big_b0:e}")));
        }
        let alpha = (2.0 * big_b0).sqrt();
        let theta_star = optimal_bias(beta0, beta1, alpha, &self.priors)?;
        Ok(ThetaDesign {
            theta_star,
            beta0,
            beta1,
            alpha,
        })
    }
}

fn gamma1_from_delta(delta0: f64, n0: usize, n1: usize, gamma0: f64) -> Result<f64> {
    if n1 < n0 {
        return Err(RqdaError::InvalidInput(format!(
            "class 0 must be the minority (n₀={n0}, n₁={n1})"
        )));
    }
    let denom = 1.0 - (1.0 / n1 as f64 - 1.0 / n0 as f64) * gamma0 * n0 as f64 * delta0;
    if !(denom > 0.0) {
        return Err(RqdaError::InvalidRegularizer(format!(
            "γ₁ design denominator {denom:e} is not positive"
        )));
    }
    Ok(gamma0 / denom)
}

pub fn asymptotic_error(
    model: &MixtureModel,
    n0: usize,
    n1: usize,
    gamma0: f64,
    gamma1: f64,
    theta: f64,
) -> Result<AsymptoticError> {
    TheoryContext::new(model)?.asymptotic_error(n0, n1, gamma0, gamma1, theta)
}

pub fn gamma1_theoretical(sigma0: &DMatrix<f64>, n0: usize, n1: usize, gamma0: f64) -> Result<f64> {
    if !(gamma0 >= 0.0) {
        return Err(RqdaError::InvalidRegularizer(format!("γ₀ = {gamma0}")));
    }
    let eigs: Vec<f64> = sigma0.clone().symmetric_eigenvalues().iter().copied().collect();
    let delta0 = eigen_delta_solver(&eigs, n0, gamma0)?;
    gamma1_from_delta(delta0, n0, n1, gamma0)
}

pub fn theta_star_theoretical(
    model: &MixtureModel,
    n0: usize,
    n1: usize,
    gamma0: f64,
    gamma1: f64,
) -> Result<ThetaDesign> {
    TheoryContext::new(model)?.theta_design(n0, n1, gamma0, gamma1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassStatistics, ScenarioConfig};
    use approx::assert_relative_eq;

    /// Root of γδ² + δ(1 + γσ − cγσ) − cσ = 0 for Σ = σI.
    pub(crate) fn isotropic_delta(sigma: f64, c: f64, gamma: f64) -> f64 {
        if gamma == 0.0 {
            return c * sigma;
        }
        let b = 1.0 + gamma * sigma - c * gamma * sigma;
        (-b + (b * b + 4.0 * gamma * c * sigma).sqrt()) / (2.0 * gamma)
    }

    fn iso(p: usize, s: f64) -> DMatrix<f64> {
        DMatrix::identity(p, p) * s
    }

    #[test]
    fn zero_gamma_is_one_step() {
        let eq = solve_delta(&iso(10, 1.0), 10, 0.0).unwrap();
        assert_eq!(eq.delta, 1.0);
        assert_eq!(eq.iterations, 1);
        assert_eq!(eigen_delta_solver(&[1.0; 10], 10, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn golden_ratio_case() {
        let want = (5f64.sqrt() - 1.0) / 2.0;
        assert_relative_eq!(
            solve_delta(&iso(40, 1.0), 40, 1.0).unwrap().delta,
            want,
            epsilon = 1e-10
        );
        assert_relative_eq!(
            eigen_delta_solver(&[1.0; 40], 40, 1.0).unwrap(),
            want,
            epsilon = 1e-10
        );
        assert_relative_eq!(isotropic_delta(1.0, 1.0, 1.0), want, epsilon = 1e-15);
    }

    #[test]
    fn four_identity_case() {
        let want = (3.0 + 41f64.sqrt()) / 2.0;
        assert_relative_eq!(isotropic_delta(4.0, 2.0, 1.0), want, epsilon = 1e-12);
        let d = eigen_delta_solver(&vec![4.0; 1000], 500, 1.0).unwrap();
        assert_relative_eq!(d, want, epsilon = 1e-9);
        let eq = solve_delta(&iso(100, 4.0), 50, 1.0).unwrap();
        assert_relative_eq!(eq.delta, want, epsilon = 1e-9);
        // residual of the quadratic
        let r = eq.delta * eq.delta + eq.delta * (1.0 + 4.0 - 8.0) - 8.0;
        assert!(r.abs() < 1e-8);
    }

    #[test]
    fn matrix_and_eigen_paths_agree() {
        let cfg = ScenarioConfig {
            p: 60,
            ..ScenarioConfig::desk()
        };
        let model = cfg.build_model().unwrap();
        let s = model.class1.covariance();
        let eigs: Vec<f64> = s.clone().symmetric_eigenvalues().iter().copied().collect();
        for (n, g) in [(30, 0.1), (60, 1.0), (120, 10.0)] {
            let a = solve_delta(s, n, g).unwrap();
            let b = eigen_delta_solver(&eigs, n, g).unwrap();
            assert!((a.delta - b).abs() < 1e-8);
            let e = class_equivalents(&eigs, n, g).unwrap();
            assert_relative_eq!(a.phi, e.phi, epsilon = 1e-9);
        }
    }

    #[test]
    fn design_gamma_examples() {
        let g = gamma1_theoretical(&iso(1000, 4.0), 500, 1000, 1.0).unwrap();
        let delta = (3.0 + 41f64.sqrt()) / 2.0;
        assert_relative_eq!(500.0 * delta, 2350.78, epsilon = 0.01);
        assert_relative_eq!(g, 1.0 / (1.0 + 500.0 * delta / 1000.0), epsilon = 1e-9);
        assert_relative_eq!(g, 0.29844, epsilon = 1e-5);

        assert_eq!(gamma1_theoretical(&iso(20, 3.0), 40, 40, 0.7).unwrap(), 0.7);
        let tiny = gamma1_theoretical(&iso(20, 3.0), 10, 40, 1e-9).unwrap();
        assert_relative_eq!(tiny, 1e-9, max_relative = 1e-6);
        assert!(gamma1_theoretical(&iso(20, 3.0), 40, 10, 1.0).is_err());
    }

    fn null_model(p: usize) -> MixtureModel {
        let c = ClassStatistics::new(DVector::zeros(p), iso(p, 2.0)).unwrap();
        MixtureModel::new(c.clone(), c, Priors::equal()).unwrap()
    }

    #[test]
    fn null_scenario_is_a_coin_flip() {
        let model = null_model(30);
        let e = asymptotic_error(&model, 40, 40, 1.0, 1.0, 0.0).unwrap();
        for i in 0..2 {
            assert_relative_eq!(e.xi_bar[i], 0.0, epsilon = 1e-14);
            assert_relative_eq!(e.b_bar[i], 0.0, epsilon = 1e-14);
            assert_relative_eq!(e.eps[i], 0.5, epsilon = 1e-14);
        }
        let d = theta_star_theoretical(&model, 40, 40, 1.0, 1.0).unwrap();
        assert_relative_eq!(d.beta0, 0.0, epsilon = 1e-14);
        assert_relative_eq!(d.beta1, 0.0, epsilon = 1e-14);
        assert_relative_eq!(d.theta_star, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn tails_tend_to_priors() {
        let model = ScenarioConfig {
            p: 50,
            ..ScenarioConfig::desk()
        }
        .build_model()
        .unwrap()
        .swapped();
        let ctx = TheoryContext::new(&model).unwrap();
        let mut last = None;
        for theta in [5.0, 10.0, 20.0, 50.0, 1e3] {
            let e = ctx.asymptotic_error(50, 100, 1.0, 0.5, theta).unwrap();
            if let Some(prev) = last {
                assert!(e.total >= prev - 1e-15);
            }
            last = Some(e.total);
        }
        assert_relative_eq!(last.unwrap(), model.priors.pi0, epsilon = 1e-12);
        let e = ctx.asymptotic_error(50, 100, 1.0, 0.5, -1e3).unwrap();
        assert_relative_eq!(e.total, model.priors.pi1, epsilon = 1e-12);
    }

    #[test]
    fn dense_and_eigen_contexts_agree() {
        let model = ScenarioConfig {
            p: 80,
            base_scale: 1.0,
            mean_offset: 1.0,
            ..ScenarioConfig::desk()
        }
        .build_model()
        .unwrap()
        .swapped();
        let a = TheoryContext::eigen(&model).unwrap();
        let b = TheoryContext::dense(&model);
        assert!(a.uses_eigenbasis() && !b.uses_eigenbasis());
        let ea = a.asymptotic_error(40, 80, 1.3, 0.6, 0.2).unwrap();
        let eb = b.asymptotic_error(40, 80, 1.3, 0.6, 0.2).unwrap();
        for i in 0..2 {
            assert!((ea.xi_bar[i] - eb.xi_bar[i]).abs() < 1e-8);
            assert!((ea.b_bar[i] - eb.b_bar[i]).abs() < 1e-8);
            assert!((ea.big_b_bar[i] - eb.big_b_bar[i]).abs() < 1e-8);
            assert!((ea.r_bar[i] - eb.r_bar[i]).abs() < 1e-8);
        }
        let ta = a.theta_design(40, 80, 1.3, 0.6).unwrap();
        let tb = b.theta_design(40, 80, 1.3, 0.6).unwrap();
        assert!((ta.theta_star - tb.theta_star).abs() < 1e-8);
    }

    #[test]
    fn non_commuting_covariances_use_dense_path() {
        let p = 6;
        let a = DMatrix::from_fn(p, p, |i, j| ((i * 5 + j * 3) % 7) as f64 / 7.0);
        let s0 = &a * a.transpose() + iso(p, 1.0);
        let s1 = iso(p, 1.0) + DMatrix::from_fn(p, p, |i, j| if i == j { i as f64 } else { 0.0 });
        let model = MixtureModel::new(
            ClassStatistics::new(DVector::zeros(p), s0).unwrap(),
            ClassStatistics::new(DVector::from_element(p, 0.5), s1).unwrap(),
            Priors::new(0.4).unwrap(),
        )
        .unwrap();
        let ctx = TheoryContext::new(&model).unwrap();
        assert!(!ctx.uses_eigenbasis());
        let e = ctx.asymptotic_error(8, 12, 1.0, 0.8, 0.0).unwrap();
        assert!(e.total > 0.0 && e.total < 1.0);
    }

    #[test]
    fn simplified_b_matches_structure() {
        // Σ₀ = Σ₁: the full B̄ has the same leading structure as the simplified one
        let model = null_model(100);
        let ctx = TheoryContext::new(&model).unwrap();
        let eq = ctx.equivalents(0, 50, 1.0).unwrap();
        let s = simplified_b_bar(&eq, 100);
        assert!(s > 0.0 && s.is_finite());
    }

    #[test]
    fn optimal_bias_cases() {
        let eq = Priors::equal();
        assert_eq!(optimal_bias(-1.0, -2.0, 1.0, &eq).unwrap(), -0.5);
        let pri = Priors::new(1.0 / 3.0).unwrap();
        assert!(matches!(
            optimal_bias(1.0, -1.0, 1.0, &pri),
            Err(RqdaError::DegenerateDesign(_))
        ));
        let (b0, b1, a) = (-1.2, -0.7, 0.9);
        let t = optimal_bias(b0, b1, a, &pri).unwrap();
        assert!(stationarity_residual(t, b0, b1, a, &pri).abs() < 1e-12);
        let f = |x| bias_objective(x, b0, b1, a, &pri);
        assert!(f(t) <= f(t + 1e-3) && f(t) <= f(t - 1e-3));
    }
}
