//! Ground-truth two-class Gaussian mixtures, spiked scenarios and sampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RqdaError};
use crate::linalg::asymmetry;

/// Stream reserved for the orthogonal basis of the spike.
pub const SPIKE_STREAM: u64 = 0;

/// Independent, reproducible generator for worker `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassStatistics {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl ClassStatistics {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let p = covariance.nrows();
        if covariance.ncols() != p {
            return Err(RqdaError::DimensionMismatch {
                expected: p,
                got: covariance.ncols(),
                context: "covariance must be square".into(),
            });
        }
        if mean.len() != p {
            return Err(RqdaError::DimensionMismatch {
                expected: p,
                got: mean.len(),
                context: "mean length vs covariance dimension".into(),
            });
        }
        if p == 0 {
            return Err(RqdaError::InvalidInput("dimension must be at least 1".into()));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(RqdaError::InvalidInput("non-finite class statistics".into()));
        }
        let asym = asymmetry(&covariance);
        if asym > 1e-12 {
            return Err(RqdaError::InvalidInput(format!(
                "covariance is not symmetric (relative defect {asym:e})"
            )));
        }
        if covariance.clone().cholesky().is_none() {
            return Err(RqdaError::NotPositiveDefinite(
                "class covariance has a nonpositive eigenvalue".into(),
            ));
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

/// Class priors (π₀, π₁).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub pi0: f64,
    pub pi1: f64,
}

impl Priors {
    pub fn new(pi0: f64) -> Result<Self> {
        if !(pi0 > 0.0 && pi0 < 1.0) {
            return Err(RqdaError::InvalidInput(format!("prior {pi0} not in (0,1)")));
        }
        Ok(Self { pi0, pi1: 1.0 - pi0 })
    }

    /// Training proportions n₀/n, n₁/n.
    pub fn from_counts(n0: usize, n1: usize) -> Result<Self> {
        if n0 == 0 || n1 == 0 {
            return Err(RqdaError::InvalidInput("empty class in prior counts".into()));
        }
        let n = (n0 + n1) as f64;
        Ok(Self {
            pi0: n0 as f64 / n,
            pi1: n1 as f64 / n,
        })
    }

    pub fn equal() -> Self {
        Self { pi0: 0.5, pi1: 0.5 }
    }

    /// log(π₁/π₀)
    pub fn log_ratio(&self) -> f64 {
        (self.pi1 / self.pi0).ln()
    }

    pub fn swapped(&self) -> Self {
        Self {
            pi0: self.pi1,
            pi1: self.pi0,
        }
    }

    pub fn get(&self, class: usize) -> f64 {
        if class == 0 {
            self.pi0
        } else {
            self.pi1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    pub class0: ClassStatistics,
    pub class1: ClassStatistics,
    pub priors: Priors,
}

impl MixtureModel {
    pub fn new(class0: ClassStatistics, class1: ClassStatistics, priors: Priors) -> Result<Self> {
        if class0.dim() != class1.dim() {
            return Err(RqdaError::DimensionMismatch {
                expected: class0.dim(),
                got: class1.dim(),
                context: "class dimensions differ".into(),
            });
        }
        if (priors.pi0 + priors.pi1 - 1.0).abs() > 1e-12 || priors.pi0 <= 0.0 || priors.pi1 <= 0.0 {
            return Err(RqdaError::InvalidInput(
                "priors must be positive and sum to 1".into(),
            ));
        }
        Ok(Self {
            class0,
            class1,
            priors,
        })
    }

    pub fn dim(&self) -> usize {
        self.class0.dim()
    }

    pub fn class(&self, i: usize) -> &ClassStatistics {
        if i == 0 {
            &self.class0
        } else {
            &self.class1
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            class0: self.class1.clone(),
            class1: self.class0.clone(),
            priors: self.priors.swapped(),
        }
    }

    /// μ₁ − μ₀
    pub fn mean_difference(&self) -> DVector<f64> {
        self.class1.mean() - self.class0.mean()
    }
}

/// Synthetic scenario: Σ₀ = base·I, Σ₁ = Σ₀ + spike·QDQᵀ, μ₀ = 0, μ₁ = (offset/√p)·1.
/// Missing JSON fields take their [`ScenarioConfig::desk`] values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub p: usize,
    pub n0: usize,
    pub n1: usize,
    pub test0: usize,
    pub test1: usize,
    pub base_scale: f64,
    pub spike_strength: f64,
    pub spike_rank: Option<usize>,
    pub mean_offset: f64,
    pub prior0: Option<f64>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ScenarioConfig {
    /// Spiked scenario at desk scale, class 0 twice as large as class 1.
    pub fn desk() -> Self {
        Self {
            p: 200,
            n0: 200,
            n1: 100,
            test0: 2000,
            test1: 1000,
            base_scale: 4.0,
            spike_strength: 3.0,
            spike_rank: None,
            mean_offset: 3.0,
            prior0: None,
            seed: 1,
        }
    }

    /// Pure mean shift with shared isotropic covariance 10·I.
    pub fn mean_shift(p: usize, n0: usize, n1: usize) -> Self {
        Self {
            p,
            n0,
            n1,
            test0: 5 * n0,
            test1: 5 * n1,
            base_scale: 10.0,
            spike_strength: 0.0,
            spike_rank: Some(0),
            mean_offset: 3.0,
            prior0: None,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 1 {
            return Err(RqdaError::InvalidInput("p must be at least 1".into()));
        }
        if self.n0 < 2 || self.n1 < 2 {
            return Err(RqdaError::InsufficientSamples {
                needed: 2,
                got: self.n0.min(self.n1),
                context: "training count per class".into(),
            });
        }
        if self.test0 < 1 || self.test1 < 1 {
            return Err(RqdaError::InsufficientSamples {
                needed: 1,
                got: self.test0.min(self.test1),
                context: "test count per class".into(),
            });
        }
        if !(self.base_scale > 0.0) || !self.base_scale.is_finite() {
            return Err(RqdaError::InvalidInput("base_scale must be positive".into()));
        }
        if !self.spike_strength.is_finite() || !self.mean_offset.is_finite() {
            return Err(RqdaError::InvalidInput("non-finite scenario parameter".into()));
        }
        if self.effective_spike_rank() > self.p {
            return Err(RqdaError::InvalidInput(format!(
                "spike_rank {} exceeds p = {}",
                self.effective_spike_rank(),
                self.p
            )));
        }
        if let Some(pi) = self.prior0 {
            Priors::new(pi)?;
        }
        Ok(())
    }

    pub fn effective_spike_rank(&self) -> usize {
        self.spike_rank
            .unwrap_or_else(|| (self.p as f64).sqrt().ceil() as usize)
    }

    /// Priors as configured, otherwise the training proportions.
    pub fn priors(&self) -> Result<Priors> {
        match self.prior0 {
            Some(pi) => Priors::new(pi),
            None => Priors::from_counts(self.n0, self.n1),
        }
    }

    pub fn build_model(&self) -> Result<MixtureModel> {
        self.validate()?;
        let p = self.p;
        let sigma0 = DMatrix::identity(p, p) * self.base_scale;
        let sigma1 = make_spiked_covariance(
            self.base_scale,
            self.spike_strength,
            self.effective_spike_rank(),
            p,
            self.seed,
        )?;
        let mu0 = DVector::zeros(p);
        let mu1 = DVector::from_element(p, self.mean_offset / (p as f64).sqrt());
        MixtureModel::new(
            ClassStatistics::new(mu0, sigma0)?,
            ClassStatistics::new(mu1, sigma1)?,
            self.priors()?,
        )
    }
}

/// First `k` columns of a Haar-distributed orthogonal p×p matrix.
///
/// Orthonormalizing a p×k Gaussian block gives the same law as truncating the
/// full QR; R's diagonal signs are moved into Q so the factor is unique.
pub fn random_orthogonal<R: Rng + ?Sized>(p: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    if k == 0 {
        return DMatrix::zeros(p, 0);
    }
    let g = DMatrix::from_fn(p, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// base·I + strength·Q_k Q_kᵀ with Q_k drawn from `seed`.
pub fn make_spiked_covariance(
    base_scale: f64,
    spike_strength: f64,
    spike_rank: usize,
    p: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if spike_rank > p {
        return Err(RqdaError::InvalidInput(format!(
            "spike_rank {spike_rank} exceeds p = {p}"
        )));
    }
    if !(base_scale > 0.0) || base_scale + spike_strength.min(0.0) <= 0.0 {
        return Err(RqdaError::NotPositiveDefinite(format!(
            "base {base_scale} with spike {spike_strength} is not positive definite"
        )));
    }
    let mut sigma = DMatrix::identity(p, p) * base_scale;
    if spike_rank == 0 || spike_strength == 0.0 {
        return Ok(sigma);
    }
    let mut rng = stream_rng(seed, SPIKE_STREAM);
    let q = random_orthogonal(p, spike_rank, &mut rng);
    let qt = q.transpose();
    let mut low_rank = &q * &qt;
    crate::linalg::symmetrize(&mut low_rank);
    sigma += low_rank * spike_strength;
    Ok(sigma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub p: usize,
    /// p/n₀ and p/n₁
    pub ratio_p_n0: f64,
    pub ratio_p_n1: f64,
    pub ratio_n0_n1: f64,
    /// ‖μ₁−μ₀‖²/√p
    pub mean_gap_scaled: f64,
    pub mean_gap_sq: f64,
    pub spectral_norm0: f64,
    pub spectral_norm1: f64,
    pub diff_threshold: f64,
    /// Eigenvalues of Σ₀−Σ₁ with magnitude above the threshold.
    pub diff_eigen_count: usize,
}

pub const DEFAULT_EIGEN_THRESHOLD: f64 = 0.5;

/// Advisory diagnostics on the growth-rate assumptions; never fails on content.
pub fn validate_assumptions(model: &MixtureModel, n0: usize, n1: usize, threshold: f64) -> AssumptionReport {
    let p = model.dim();
    let mu = model.mean_difference();
    let gap = mu.norm_squared();
    let s0 = model.class0.covariance();
    let s1 = model.class1.covariance();
    let ev0 = s0.clone().symmetric_eigenvalues();
    let ev1 = s1.clone().symmetric_eigenvalues();
    let diff = (s0 - s1).symmetric_eigenvalues();
    AssumptionReport {
        p,
        ratio_p_n0: p as f64 / n0 as f64,
        ratio_p_n1: p as f64 / n1 as f64,
        ratio_n0_n1: n0 as f64 / n1 as f64,
        mean_gap_scaled: gap / (p as f64).sqrt(),
        mean_gap_sq: gap,
        spectral_norm0: ev0.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        spectral_norm1: ev1.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        diff_threshold: threshold,
        diff_eigen_count: diff.iter().filter(|v| v.abs() > threshold).count(),
    }
}

/// Draws x = μ + L z with the Cholesky factor L of Σ.
#[derive(Clone, Debug)]
pub struct ClassSampler {
    mean: DVector<f64>,
    factor_t: DMatrix<f64>,
}

impl ClassSampler {
    pub fn new(stats: &ClassStatistics) -> Result<Self> {
        let chol = stats
            .covariance()
            .clone()
            .cholesky()
            .ok_or_else(|| RqdaError::NotPositiveDefinite("covariance factorization failed".into()))?;
        Ok(Self {
            mean: stats.mean().clone(),
            factor_t: chol.l().transpose(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// n×p matrix of i.i.d. rows.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let p = self.dim();
        let mut z = DMatrix::<f64>::zeros(n, p);
        // row-major fill so a prefix of rows does not depend on n
        for i in 0..n {
            for j in 0..p {
                z[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let mut x = z * &self.factor_t;
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }
}

pub fn sample_class<R: Rng + ?Sized>(stats: &ClassStatistics, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if n < 1 {
        return Err(RqdaError::InsufficientSamples {
            needed: 1,
            got: n,
            context: "sample_class".into(),
        });
    }
    Ok(ClassSampler::new(stats)?.sample(n, rng))
}
