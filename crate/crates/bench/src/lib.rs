//! Experiment drivers behind the `rqda-bench` command line. Every command
//! returns the CSV it would write, so runs can be compared byte for byte.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use rqda::discriminant::{fit_pooled, LinearRule, QuadraticRule};
use rqda::estimation::{fit_from_moments, sample_moments, ClassMoments};
use rqda::experiment::{evaluate_split, run_replicates, ReplicateOutcome, Scenario, SplitErrors};
use rqda::gestim::{design_from_moments, GOptions, MeanCorrection};
use rqda::ingestion::{load_csv, make_imbalanced_split, CsvOptions, LabelColumn, LabeledDataset, SplitSpec};
use rqda::pipeline::{default_grid, tune_gamma0_with};
use rqda::{Priors, RqdaError, ScenarioConfig, TrainingSet};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(RqdaError),
    #[error("data error: {0}")]
    Data(RqdaError),
    #[error("output error: {0}")]
    Output(String),
}

impl BenchError {
    /// 1 for configuration, data and I/O problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

impl From<RqdaError> for BenchError {
    fn from(e: RqdaError) -> Self {
        if e.is_numerical() {
            BenchError::Numerical(e)
        } else {
            BenchError::Data(e)
        }
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        BenchError::Output(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Options of the `real` and `tune` commands that read a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    /// Label column by header name; `label_index` is used when absent.
    pub label: Option<String>,
    pub label_index: usize,
    pub has_header: bool,
    pub standardize: bool,
    pub class_a: i64,
    pub class_b: i64,
    /// n₀/n₁ values swept by `real`.
    pub ratios: Vec<f64>,
    /// Training rows of class B per split.
    pub n1: usize,
    /// Tune γ₀ on each split; `gamma0` is used otherwise.
    pub tune: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            label: None,
            label_index: 0,
            has_header: true,
            standardize: false,
            class_a: 0,
            class_b: 1,
            ratios: vec![0.25, 0.5, 1.0],
            n1: 100,
            tune: true,
        }
    }
}

impl DataConfig {
    fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            label: match &self.label {
                Some(name) => LabelColumn::Name(name.clone()),
                None => LabelColumn::Index(self.label_index),
            },
            has_header: self.has_header,
            standardize: self.standardize,
        }
    }

    fn load(&self) -> Result<LabeledDataset> {
        let path = self
            .path
            .as_ref()
            .ok_or_else(|| BenchError::Config("no data file given (--data or data.path)".into()))?;
        load_csv(path, &self.csv_options()).map_err(|e| match e {
            RqdaError::Io(io) => BenchError::Config(format!("{}: {io}", path.display())),
            other => BenchError::Data(other),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub scenario: ScenarioConfig,
    pub replicates: usize,
    /// Fixed γ₀ of `histogram`, `sweep-p` and untuned `real`.
    pub gamma0: f64,
    /// γ₀ candidates of `sweep-gamma`, `real` and `tune`.
    pub grid: Vec<f64>,
    pub p_list: Vec<usize>,
    pub mean_correction: MeanCorrection,
    pub data: DataConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::desk(),
            replicates: 20,
            gamma0: 1.0,
            grid: default_grid(),
            p_list: vec![100, 200, 400],
            mean_correction: MeanCorrection::default(),
            data: DataConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| BenchError::Config(format!("config JSON: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self, command: &Command) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        self.scenario
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.gamma0 > 0.0) || !self.gamma0.is_finite() {
            return bad(format!("gamma0 = {} must be positive", self.gamma0));
        }
        let uses_grid = matches!(command, Command::SweepGamma | Command::Tune { .. })
            || (matches!(command, Command::Real) && self.data.tune);
        if uses_grid {
            if self.grid.is_empty() {
                return bad("empty γ₀ grid".into());
            }
            if let Some(g) = self.grid.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
                return bad(format!("grid value {g} must be positive"));
            }
        }
        if matches!(command, Command::SweepP) {
            if self.p_list.is_empty() {
                return bad("empty p list".into());
            }
            if self.p_list.contains(&0) {
                return bad("p values must be positive".into());
            }
        }
        if matches!(command, Command::Real) {
            if self.data.ratios.is_empty() {
                return bad("empty ratio list".into());
            }
            if let Some(r) = self.data.ratios.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
                return bad(format!("ratio {r} must be positive"));
            }
        }
        Ok(())
    }

    /// sha256 of the JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn opts(&self) -> GOptions {
        GOptions {
            mean_correction: self.mean_correction,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Histogram,
    SweepGamma,
    SweepP,
    Real,
    Tune { model_out: Option<PathBuf> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Histogram => "histogram",
            Command::SweepGamma => "sweep-gamma",
            Command::SweepP => "sweep-p",
            Command::Real => "real",
            Command::Tune { .. } => "tune",
        }
    }
}

/// Validates the config and runs `command`, returning the full CSV text.
pub fn run(command: &Command, config: &BenchConfig) -> Result<String> {
    config.validate(command)?;
    let body = match command {
        Command::Histogram => histogram(config)?,
        Command::SweepGamma => sweep_gamma(config)?,
        Command::SweepP => sweep_p(config)?,
        Command::Real => real(config)?,
        Command::Tune { model_out } => tune(config, model_out.as_deref())?,
    };
    let mut out = format!(
        "# command={} seed={} config_sha256={} version={}\n",
        command.name(),
        config.scenario.seed,
        config.hash(),
        env!("CARGO_PKG_VERSION")
    );
    out.push_str(&body);
    Ok(out)
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

struct Table(csv::Writer<Vec<u8>>);

impl Table {
    fn new(header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        Ok(Self(w))
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        Ok(self.0.write_record(fields)?)
    }

    fn finish(self) -> Result<String> {
        let bytes = self
            .0
            .into_inner()
            .map_err(|e| BenchError::Output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| BenchError::Output(e.to_string()))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

type ScoreFn<'a> = dyn Fn(&DMatrix<f64>) -> rqda::Result<Vec<f64>> + 'a;

/// Raw scores of the four rules on one test draw, in the configured labels:
/// a positive score votes for class 0.
fn histogram(config: &BenchConfig) -> Result<String> {
    let scn = Scenario::new(&config.scenario)?;
    let mut rng = scn.replicate_rng(0);
    let [x0, x1] = scn.draw_training(&mut rng);
    let test = scn.draw_test(&mut rng);
    let priors = scn.priors();
    let m = [sample_moments(&x0)?, sample_moments(&x1)?];
    let (fit, est) = design_from_moments(&m[0], &m[1], config.gamma0, &priors, &config.opts())?;
    let shared = fit_from_moments(&m[0], &m[1], config.gamma0, config.gamma0)?;
    let pooled = fit_pooled(&m[0], &m[1], config.gamma0)?;

    let qda = QuadraticRule::true_qda(&scn.canonical)?;
    let standard = QuadraticRule::standard(&shared, &priors)?;
    let improved = QuadraticRule::improved(&fit, est.theta_hat);
    let lda = LinearRule::rlda(&pooled, &priors);
    let rules: [(&str, Box<ScoreFn>); 4] = [
        ("true-qda", Box::new(|x| qda.score_rows(x))),
        ("standard-rqda", Box::new(|x| standard.score_rows(x))),
        ("improved-rqda", Box::new(|x| improved.score_rows(x))),
        ("r-lda", Box::new(|x| lda.score_rows(x))),
    ];
    let sign = if scn.swapped { -1.0 } else { 1.0 };
    let mut t = Table::new(&["rule", "true_class", "score"])?;
    for (name, score) in &rules {
        for label in 0..2 {
            let canonical = if scn.swapped { 1 - label } else { label };
            for v in score(&test[canonical])? {
                t.row([name.to_string(), label.to_string(), num(sign * v)])?;
            }
        }
    }
    t.finish()
}

struct Aggregate {
    ok: usize,
    failures: usize,
    reason: String,
    true_qda: Option<f64>,
    standard: Option<f64>,
    improved: Option<f64>,
    rlda: Option<f64>,
    theorem1: Option<f64>,
    g_estimate: Option<f64>,
    gamma1_hat: Option<f64>,
    theta_hat: Option<f64>,
}

/// Averages grid point `k` over replicates; failed replicates are counted, not averaged.
fn aggregate(reps: &[ReplicateOutcome], k: usize) -> Aggregate {
    let pts: Vec<_> = reps.iter().map(|r| (&r.points[k], r.true_qda)).collect();
    let good: Vec<_> = pts.iter().filter(|(p, _)| p.failure.is_none()).collect();
    let reason = pts
        .iter()
        .find_map(|(p, _)| p.failure.clone())
        .unwrap_or_default();
    Aggregate {
        ok: good.len(),
        failures: pts.len() - good.len(),
        reason,
        true_qda: mean(good.iter().map(|(_, q)| *q)),
        standard: mean(good.iter().map(|(p, _)| p.standard)),
        improved: mean(good.iter().map(|(p, _)| p.improved)),
        rlda: mean(good.iter().map(|(p, _)| p.rlda)),
        theorem1: if good.iter().all(|(p, _)| p.theorem1.is_some()) {
            mean(good.iter().filter_map(|(p, _)| p.theorem1))
        } else {
            None
        },
        g_estimate: mean(good.iter().map(|(p, _)| p.g_estimate)),
        gamma1_hat: mean(good.iter().map(|(p, _)| p.gamma1_hat)),
        theta_hat: mean(good.iter().map(|(p, _)| p.theta_hat)),
    }
}

fn sweep_gamma(config: &BenchConfig) -> Result<String> {
    let scn = Scenario::new(&config.scenario)?;
    let reps = run_replicates(&scn, &config.grid, config.replicates, true, &config.opts())?;
    let mut t = Table::new(&[
        "gamma0",
        "replicates",
        "failures",
        "empirical_true_qda",
        "empirical_std_rqda",
        "empirical_improved",
        "empirical_rlda",
        "theorem1",
        "g_estimate",
        "gamma1_hat",
        "theta_hat",
        "failure_reason",
    ])?;
    for (k, g) in config.grid.iter().enumerate() {
        let a = aggregate(&reps, k);
        t.row([
            num(*g),
            a.ok.to_string(),
            a.failures.to_string(),
            opt(a.true_qda),
            opt(a.standard),
            opt(a.improved),
            opt(a.rlda),
            opt(a.theorem1),
            opt(a.g_estimate),
            opt(a.gamma1_hat),
            opt(a.theta_hat),
            a.reason,
        ])?;
    }
    t.finish()
}

/// The configured scenario at dimension `p`, with n₀/p and n₁/p held fixed.
pub fn rescaled(cfg: &ScenarioConfig, p: usize) -> ScenarioConfig {
    let scale = |n: usize| ((n as f64 * p as f64 / cfg.p as f64).round() as usize).max(2);
    ScenarioConfig {
        p,
        n0: scale(cfg.n0),
        n1: scale(cfg.n1),
        ..cfg.clone()
    }
}

fn sweep_p(config: &BenchConfig) -> Result<String> {
    let mut t = Table::new(&[
        "p",
        "n0",
        "n1",
        "replicates",
        "failures",
        "empirical_true_qda",
        "empirical_std_rqda",
        "empirical_improved",
        "empirical_rlda",
        "theorem1",
        "g_estimate",
        "failure_reason",
    ])?;
    for &p in &config.p_list {
        let cfg = rescaled(&config.scenario, p);
        let scn = Scenario::new(&cfg)?;
        let reps = run_replicates(&scn, &[config.gamma0], config.replicates, true, &config.opts())?;
        let a = aggregate(&reps, 0);
        t.row([
            p.to_string(),
            cfg.n0.to_string(),
            cfg.n1.to_string(),
            a.ok.to_string(),
            a.failures.to_string(),
            opt(a.true_qda),
            opt(a.standard),
            opt(a.improved),
            opt(a.rlda),
            opt(a.theorem1),
            opt(a.g_estimate),
            a.reason,
        ])?;
    }
    t.finish()
}

/// Errors of one split with the training minority as class 0 and priors
/// from the training proportions.
fn evaluate(split: &rqda::ingestion::Split, grid: &[f64], opts: &GOptions) -> rqda::Result<SplitErrors> {
    let (x0, x1, t0, t1) = if split.train.n0() > split.train.n1() {
        (&split.train.x1, &split.train.x0, &split.test1, &split.test0)
    } else {
        (&split.train.x0, &split.train.x1, &split.test0, &split.test1)
    };
    let moments: [ClassMoments; 2] = [sample_moments(x0)?, sample_moments(x1)?];
    let priors = Priors::from_counts(x0.nrows(), x1.nrows())?;
    evaluate_split(&moments, &[t0.clone(), t1.clone()], grid, &priors, opts)
}

type SplitOutcome = rqda::Result<SplitErrors>;
type Column = fn(&SplitErrors) -> f64;

fn real(config: &BenchConfig) -> Result<String> {
    let ds = config.data.load()?;
    let grid = if config.data.tune {
        config.grid.clone()
    } else {
        vec![config.gamma0]
    };
    let mut t = Table::new(&[
        "ratio",
        "n0",
        "n1",
        "method",
        "error",
        "splits",
        "failures",
        "failure_reason",
    ])?;
    for &ratio in &config.data.ratios {
        let results: Vec<Result<SplitOutcome>> = (0..config.replicates)
            .into_par_iter()
            .map(|s| {
                let spec = SplitSpec {
                    class_a: config.data.class_a,
                    class_b: config.data.class_b,
                    ratio,
                    n1: config.data.n1,
                    seed: config.scenario.seed.wrapping_add(s as u64),
                };
                let split = make_imbalanced_split(&ds, &spec).map_err(BenchError::Data)?;
                Ok(evaluate(&split, &grid, &config.opts()))
            })
            .collect();
        let mut good = Vec::new();
        let mut reason = String::new();
        for r in results {
            match r? {
                Ok(e) => good.push(e),
                Err(e) if reason.is_empty() => reason = e.to_string(),
                Err(_) => {}
            }
        }
        let failures = config.replicates - good.len();
        let n0 = (ratio * config.data.n1 as f64).floor() as usize;
        let methods: [(&str, Column); 4] = [
            ("improved-rqda", |e| e.improved),
            ("standard-rqda", |e| e.standard),
            ("r-lda", |e| e.rlda),
            ("g-estimate", |e| e.g_estimate),
        ];
        for (name, f) in methods {
            t.row([
                num(ratio),
                n0.to_string(),
                config.data.n1.to_string(),
                name.to_string(),
                opt(mean(good.iter().map(f))),
                good.len().to_string(),
                failures.to_string(),
                reason.clone(),
            ])?;
        }
    }
    t.finish()
}

/// Tuning trace on a CSV file (classes A and B) or on one synthetic draw.
fn tune(config: &BenchConfig, model_out: Option<&std::path::Path>) -> Result<String> {
    let train = if config.data.path.is_some() {
        let ds = config.data.load()?;
        TrainingSet::new(
            ds.select(ds.rows_of(config.data.class_a)?),
            ds.select(ds.rows_of(config.data.class_b)?),
        )?
    } else {
        let scn = Scenario::new(&config.scenario)?;
        let [a, b] = scn.draw_training(&mut scn.replicate_rng(0));
        if scn.swapped {
            TrainingSet::new(b, a)?
        } else {
            TrainingSet::new(a, b)?
        }
    };
    let model = tune_gamma0_with(&train, &config.grid, None, &config.opts())?;
    if let Some(path) = model_out {
        model
            .save(path)
            .map_err(|e| BenchError::Output(format!("{}: {e}", path.display())))?;
    }
    let mut t = Table::new(&["gamma0", "total_hat", "selected", "failure_reason"])?;
    for p in &model.trace {
        t.row([
            num(p.gamma0),
            opt(p.total_hat),
            u8::from(p.gamma0 == model.gamma0()).to_string(),
            p.failure.clone().unwrap_or_default(),
        ])?;
    }
    t.finish()
}
