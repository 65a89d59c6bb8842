//! Per-class sample moments and the regularized resolvents H(γ) = (I + γΣ̂)⁻¹.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RqdaError};
use crate::linalg::{spd_inverse_logdet, symmetrize};

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(x0: DMatrix<f64>, x1: DMatrix<f64>) -> Result<Self> {
        if x0.ncols() != x1.ncols() {
            return Err(RqdaError::DimensionMismatch {
                expected: x0.ncols(),
                got: x1.ncols(),
                context: "feature count of class 1 training block".into(),
            });
        }
        if x0.ncols() == 0 {
            return Err(RqdaError::InvalidInput("training blocks have no columns".into()));
        }
        for (i, x) in [&x0, &x1].into_iter().enumerate() {
            if x.nrows() < 2 {
                return Err(RqdaError::InsufficientSamples {
                    needed: 2,
                    got: x.nrows(),
                    context: format!("training rows of class {i}"),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(RqdaError::InvalidInput(format!(
                    "non-finite value in class {i} training block"
                )));
            }
        }
        Ok(Self { x0, x1 })
    }

    pub fn dim(&self) -> usize {
        self.x0.ncols()
    }

    pub fn n0(&self) -> usize {
        self.x0.nrows()
    }

    pub fn n1(&self) -> usize {
        self.x1.nrows()
    }

    pub fn swapped(&self) -> Self {
        Self {
            x0: self.x1.clone(),
            x1: self.x0.clone(),
        }
    }
}

/// Sample mean and unbiased (n−1) covariance of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl ClassMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Degrees of freedom n − 1 of the covariance estimate.
    pub fn dof(&self) -> usize {
        self.n - 1
    }
}

pub fn sample_moments(x: &DMatrix<f64>) -> Result<ClassMoments> {
    let n = x.nrows();
    if n < 2 {
        return Err(RqdaError::InsufficientSamples {
            needed: 2,
            got: n,
            context: "sample covariance".into(),
        });
    }
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let ct = centered.transpose();
    let mut covariance = &ct * &centered;
    covariance /= (n - 1) as f64;
    symmetrize(&mut covariance);
    Ok(ClassMoments { mean, covariance, n })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Resolvent {
    pub matrix: DMatrix<f64>,
    /// log|H| = −log|I + γΣ̂|
    pub log_det: f64,
    pub gamma: f64,
}

pub fn regularized_resolvent(sigma_hat: &DMatrix<f64>, gamma: f64) -> Result<Resolvent> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(RqdaError::InvalidRegularizer(format!(
            "γ = {gamma} must be finite and nonnegative"
        )));
    }
    let p = sigma_hat.nrows();
    let a = DMatrix::identity(p, p) + sigma_hat * gamma;
    let (matrix, log_det_a) = spd_inverse_logdet(&a, "I + γΣ̂")?;
    Ok(Resolvent {
        matrix,
        log_det: -log_det_a,
        gamma,
    })
}

/// Plug-in statistics and resolvents of both classes.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedStats {
    pub class0: ClassMoments,
    pub class1: ClassMoments,
    pub h0: Resolvent,
    pub h1: Resolvent,
}

impl FittedStats {
    pub fn dim(&self) -> usize {
        self.class0.dim()
    }

    pub fn gamma0(&self) -> f64 {
        self.h0.gamma
    }

    pub fn gamma1(&self) -> f64 {
        self.h1.gamma
    }

    pub fn moments(&self, i: usize) -> &ClassMoments {
        if i == 0 {
            &self.class0
        } else {
            &self.class1
        }
    }

    pub fn resolvent(&self, i: usize) -> &Resolvent {
        if i == 0 {
            &self.h0
        } else {
            &self.h1
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            class0: self.class1.clone(),
            class1: self.class0.clone(),
            h0: self.h1.clone(),
            h1: self.h0.clone(),
        }
    }
}

pub fn fit_from_moments(
    class0: &ClassMoments,
    class1: &ClassMoments,
    gamma0: f64,
    gamma1: f64,
) -> Result<FittedStats> {
    if class0.dim() != class1.dim() {
        return Err(RqdaError::DimensionMismatch {
            expected: class0.dim(),
            got: class1.dim(),
            context: "class moment dimensions".into(),
        });
    }
    Ok(FittedStats {
        h0: regularized_resolvent(&class0.covariance, gamma0)?,
        h1: regularized_resolvent(&class1.covariance, gamma1)?,
        class0: class0.clone(),
        class1: class1.clone(),
    })
}

pub fn fit(train: &TrainingSet, gamma0: f64, gamma1: f64) -> Result<FittedStats> {
    let m0 = sample_moments(&train.x0)?;
    let m1 = sample_moments(&train.x1)?;
    fit_from_moments(&m0, &m1, gamma0, gamma1)
}
