//! Regularized quadratic discriminant analysis for imbalanced two-class
//! problems, with large-dimensional error approximations and training-only
//! error estimates used to design and tune the classifier.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discriminant;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod gestim;
pub mod ingestion;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod rmt;

pub use discriminant::{
    classify, conditional_score_moments, empirical_error, improved_score, qda_score_true, rlda_score,
    rqda_score, ErrorReport, QuadraticRule, RuleKind, Score,
};
pub use error::{Result, RqdaError};
pub use estimation::{fit, regularized_resolvent, sample_moments, FittedStats, TrainingSet};
pub use gestim::{delta_hat, g_estimator_error, gamma1_hat, theta_hat, GEstimate, GOptions, MeanCorrection};
pub use model::{
    make_spiked_covariance, sample_class, validate_assumptions, ClassStatistics, MixtureModel, Priors,
    ScenarioConfig,
};
pub use pipeline::{fit_improved, predict, tune_gamma0, ImprovedModel};
pub use rmt::{
    asymptotic_error, eigen_delta_solver, gamma1_theoretical, solve_delta, theta_star_theoretical,
    AsymptoticError, DeterministicEquivalents, TheoryContext,
};
