//! Monte-Carlo drivers over synthetic scenarios, shared by the bench CLI
//! and the acceptance checks.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discriminant::{empirical_error, fit_pooled, LinearRule, QuadraticRule};
use crate::error::Result;
use crate::estimation::{fit_from_moments, sample_moments, ClassMoments};
use crate::gestim::{design_from_moments, GOptions};
use crate::model::{stream_rng, ClassSampler, MixtureModel, Priors, ScenarioConfig};
use crate::pipeline::tuning_trace;
use crate::rmt::TheoryContext;

/// A scenario in canonical orientation (class 0 = training minority).
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    /// Model with the configured labels.
    pub model: MixtureModel,
    pub canonical: MixtureModel,
    pub swapped: bool,
    pub n: [usize; 2],
    pub test: [usize; 2],
    samplers: [ClassSampler; 2],
}

impl Scenario {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        let model = config.build_model()?;
        let swapped = config.n1 < config.n0;
        let canonical = if swapped { model.swapped() } else { model.clone() };
        let (n, test) = if swapped {
            ([config.n1, config.n0], [config.test1, config.test0])
        } else {
            ([config.n0, config.n1], [config.test0, config.test1])
        };
        let samplers = [
            ClassSampler::new(&canonical.class0)?,
            ClassSampler::new(&canonical.class1)?,
        ];
        Ok(Self {
            config: config.clone(),
            model,
            canonical,
            swapped,
            n,
            test,
            samplers,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.p
    }

    pub fn priors(&self) -> Priors {
        self.canonical.priors
    }

    /// Generator of replicate `r`; stream 0 is reserved for the scenario itself.
    pub fn replicate_rng(&self, r: usize) -> ChaCha8Rng {
        stream_rng(self.config.seed, 1 + r as u64)
    }

    pub fn draw_training(&self, rng: &mut ChaCha8Rng) -> [DMatrix<f64>; 2] {
        [
            self.samplers[0].sample(self.n[0], rng),
            self.samplers[1].sample(self.n[1], rng),
        ]
    }

    pub fn draw_test(&self, rng: &mut ChaCha8Rng) -> [DMatrix<f64>; 2] {
        [
            self.samplers[0].sample(self.test[0], rng),
            self.samplers[1].sample(self.test[1], rng),
        ]
    }

    pub fn draw_moments(&self, rng: &mut ChaCha8Rng) -> Result<[ClassMoments; 2]> {
        let [x0, x1] = self.draw_training(rng);
        Ok([sample_moments(&x0)?, sample_moments(&x1)?])
    }

    /// Theory evaluated with the degrees of freedom nᵢ − 1 of the sample covariances.
    pub fn theory(&self) -> Result<TheoryContext> {
        TheoryContext::new(&self.canonical)
    }

    pub fn dof(&self) -> [usize; 2] {
        [self.n[0] - 1, self.n[1] - 1]
    }
}

/// Test errors of one replicate at one γ₀.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub replicate: usize,
    pub gamma0: f64,
    pub gamma1_hat: f64,
    pub theta_hat: f64,
    pub improved: f64,
    pub standard: f64,
    pub rlda: f64,
    pub g_estimate: f64,
    pub theorem1: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub true_qda: f64,
    pub points: Vec<GridRecord>,
}

fn test_error<F>(score: F, test: &[DMatrix<f64>; 2], priors: &Priors) -> Result<f64>
where
    F: Fn(&DMatrix<f64>) -> Result<Vec<f64>>,
{
    let s0 = score(&test[0])?;
    let s1 = score(&test[1])?;
    Ok(empirical_error(&s0, &s1, priors)?.total)
}

/// Errors of the improved, standard and R-LDA rules at a shared γ₀.
fn grid_point(
    moments: &[ClassMoments; 2],
    test: &[DMatrix<f64>; 2],
    gamma0: f64,
    priors: &Priors,
    theory: Option<(&TheoryContext, [usize; 2])>,
    opts: &GOptions,
) -> Result<(SplitErrors, Option<f64>)> {
    let (fit, est) = design_from_moments(&moments[0], &moments[1], gamma0, priors, opts)?;
    let improved_rule = QuadraticRule::improved(&fit, est.theta_hat);
    let improved = test_error(|x| improved_rule.score_rows(x), test, priors)?;

    let shared = fit_from_moments(&moments[0], &moments[1], gamma0, gamma0)?;
    let standard_rule = QuadraticRule::standard(&shared, priors)?;
    let standard = test_error(|x| standard_rule.score_rows(x), test, priors)?;

    let pooled = fit_pooled(&moments[0], &moments[1], gamma0)?;
    let lda = LinearRule::rlda(&pooled, priors);
    let rlda = test_error(|x| lda.score_rows(x), test, priors)?;

    let theorem1 = match theory {
        Some((ctx, dof)) => Some(
            ctx.asymptotic_error(dof[0], dof[1], gamma0, fit.gamma1(), est.theta_hat)?
                .total,
        ),
        None => None,
    };
    Ok((
        SplitErrors {
            gamma0,
            gamma1_hat: fit.gamma1(),
            theta_hat: est.theta_hat,
            improved,
            standard,
            rlda,
            g_estimate: est.total_hat,
        },
        theorem1,
    ))
}

/// One training/test draw evaluated over a γ₀ grid.
pub fn run_replicate(
    scn: &Scenario,
    theory: Option<&TheoryContext>,
    grid: &[f64],
    replicate: usize,
    opts: &GOptions,
) -> Result<ReplicateOutcome> {
    let mut rng = scn.replicate_rng(replicate);
    let moments = scn.draw_moments(&mut rng)?;
    let test = scn.draw_test(&mut rng);
    let priors = scn.priors();
    let qda = QuadraticRule::true_qda(&scn.canonical)?;
    let true_qda = test_error(|x| qda.score_rows(x), &test, &priors)?;
    let points = grid
        .iter()
        .map(|&gamma0| {
            match grid_point(
                &moments,
                &test,
                gamma0,
                &priors,
                theory.map(|t| (t, scn.dof())),
                opts,
            ) {
                Ok((e, theorem1)) => GridRecord {
                    replicate,
                    gamma0,
                    gamma1_hat: e.gamma1_hat,
                    theta_hat: e.theta_hat,
                    improved: e.improved,
                    standard: e.standard,
                    rlda: e.rlda,
                    g_estimate: e.g_estimate,
                    theorem1,
                    failure: None,
                },
                Err(e) => GridRecord {
                    replicate,
                    gamma0,
                    gamma1_hat: f64::NAN,
                    theta_hat: f64::NAN,
                    improved: f64::NAN,
                    standard: f64::NAN,
                    rlda: f64::NAN,
                    g_estimate: f64::NAN,
                    theorem1: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(ReplicateOutcome {
        replicate,
        true_qda,
        points,
    })
}

/// Replicates 0..count in parallel, returned in replicate order.
pub fn run_replicates(
    scn: &Scenario,
    grid: &[f64],
    count: usize,
    with_theory: bool,
    opts: &GOptions,
) -> Result<Vec<ReplicateOutcome>> {
    let theory = if with_theory { Some(scn.theory()?) } else { None };
    (0..count)
        .into_par_iter()
        .map(|r| run_replicate(scn, theory.as_ref(), grid, r, opts))
        .collect()
}

/// Errors of the tuned improved rule and of the baselines at the tuned γ₀.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedRecord {
    pub replicate: usize,
    pub gamma0: f64,
    pub improved: f64,
    pub standard: f64,
    pub rlda: f64,
    pub true_qda: f64,
    pub g_estimate: f64,
}

/// Test errors of one canonical training set at a selected γ₀.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitErrors {
    pub gamma0: f64,
    pub gamma1_hat: f64,
    pub theta_hat: f64,
    pub improved: f64,
    pub standard: f64,
    pub rlda: f64,
    pub g_estimate: f64,
}

/// Picks γ₀ from `grid` by the estimated error (a single value is used as is)
/// and evaluates all three rules there.
pub fn evaluate_split(
    moments: &[ClassMoments; 2],
    test: &[DMatrix<f64>; 2],
    grid: &[f64],
    priors: &Priors,
    opts: &GOptions,
) -> Result<SplitErrors> {
    let gamma0 = match grid {
        [] => return Err(crate::error::RqdaError::InvalidInput("empty γ₀ grid".into())),
        [g] => *g,
        _ => {
            let trace = tuning_trace(&moments[0], &moments[1], grid, priors, opts);
            trace
                .iter()
                .filter_map(|t| t.total_hat.map(|e| (t.gamma0, e)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
                .map(|(g, _)| g)
                .ok_or_else(|| crate::error::RqdaError::TuningFailed {
                    failures: trace
                        .iter()
                        .map(|t| (t.gamma0, t.failure.clone().unwrap_or_default()))
                        .collect(),
                })?
        }
    };
    grid_point(moments, test, gamma0, priors, None, opts).map(|(e, _)| e)
}

pub fn run_tuned(scn: &Scenario, grid: &[f64], replicate: usize, opts: &GOptions) -> Result<TunedRecord> {
    let mut rng = scn.replicate_rng(replicate);
    let moments = scn.draw_moments(&mut rng)?;
    let test = scn.draw_test(&mut rng);
    let priors = scn.priors();
    let e = evaluate_split(&moments, &test, grid, &priors, opts)?;
    let qda = QuadraticRule::true_qda(&scn.canonical)?;
    let true_qda = test_error(|x| qda.score_rows(x), &test, &priors)?;
    Ok(TunedRecord {
        replicate,
        gamma0: e.gamma0,
        improved: e.improved,
        standard: e.standard,
        rlda: e.rlda,
        true_qda,
        g_estimate: e.g_estimate,
    })
}

pub fn run_tuned_replicates(
    scn: &Scenario,
    grid: &[f64],
    count: usize,
    opts: &GOptions,
) -> Result<Vec<TunedRecord>> {
    (0..count)
        .into_par_iter()
        .map(|r| run_tuned(scn, grid, r, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            p: 16,
            n0: 40,
            n1: 20,
            test0: 100,
            test1: 50,
            ..ScenarioConfig::desk()
        }
    }

    #[test]
    fn orientation_is_canonical() {
        let s = Scenario::new(&small()).unwrap();
        assert!(s.swapped);
        assert_eq!(s.n, [20, 40]);
        assert_eq!(s.test, [50, 100]);
        assert_eq!(s.canonical.class0, s.model.class1);
        assert!(s.priors().pi0 < s.priors().pi1);
    }

    #[test]
    fn replicates_are_reproducible() {
        let s = Scenario::new(&small()).unwrap();
        let grid = [0.1, 1.0];
        let a = run_replicates(&s, &grid, 3, true, &GOptions::default()).unwrap();
        let b = run_replicates(&s, &grid, 3, true, &GOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|o| o.points.len() == 2));
        for o in &a {
            for pnt in &o.points {
                if pnt.failure.is_none() {
                    for e in [pnt.improved, pnt.standard, pnt.rlda, pnt.g_estimate] {
                        assert!((0.0..=1.0).contains(&e));
                    }
                }
            }
        }
    }

    #[test]
    fn tuned_run_picks_a_grid_value() {
        let s = Scenario::new(&small()).unwrap();
        let grid = [0.1, 1.0, 10.0];
        let t = run_tuned(&s, &grid, 0, &GOptions::default()).unwrap();
        assert!(grid.contains(&t.gamma0));
    }
}
