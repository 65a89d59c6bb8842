use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use rqda::MeanCorrection;
use rqda_bench::{run, BenchConfig, BenchError, Command};

/// Desk-scale experiments for improved R-QDA; writes CSV with a `# key=value` metadata line.
#[derive(Parser, Debug)]
#[command(name = "rqda-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Worker threads (rayon default when absent).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    p: Option<usize>,
    #[arg(long, global = true)]
    n0: Option<usize>,
    #[arg(long, global = true)]
    n1: Option<usize>,
    #[arg(long, global = true)]
    test0: Option<usize>,
    #[arg(long, global = true)]
    test1: Option<usize>,
    #[arg(long, global = true)]
    base_scale: Option<f64>,
    #[arg(long, global = true)]
    spike_strength: Option<f64>,
    #[arg(long, global = true)]
    spike_rank: Option<usize>,
    #[arg(long, global = true)]
    mean_offset: Option<f64>,
    /// Prior of class 0; training proportions when absent.
    #[arg(long, global = true)]
    prior0: Option<f64>,
    #[arg(long, global = true)]
    gamma0: Option<f64>,
    /// Comma-separated γ₀ candidates.
    #[arg(long, global = true, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Drop the finite-sample term of the estimated score mean.
    #[arg(long, global = true)]
    asymptotic_mean: bool,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with one label column and numeric features.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column by header name.
    #[arg(long)]
    label: Option<String>,
    /// Label column by 0-based index.
    #[arg(long)]
    label_index: Option<usize>,
    #[arg(long)]
    no_header: bool,
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    class_a: Option<i64>,
    #[arg(long)]
    class_b: Option<i64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Scores of every rule on one test draw.
    Histogram,
    /// Errors versus γ₀ averaged over replicates.
    SweepGamma,
    /// Errors versus p at fixed γ₀ and fixed n/p.
    SweepP {
        /// Comma-separated dimensions.
        #[arg(long, value_delimiter = ',')]
        p_list: Option<Vec<usize>>,
    },
    /// Errors versus the n₀/n₁ ratio on a labeled CSV.
    Real {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated n₀/n₁ values.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        /// Training rows of class B per split.
        #[arg(long = "train-n1")]
        train_n1: Option<usize>,
        /// Use --gamma0 on every split instead of tuning.
        #[arg(long)]
        fixed_gamma: bool,
    },
    /// Tuning trace of γ₀ on a CSV file or one synthetic draw.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        /// Save the selected model as JSON.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
}

fn apply_data(cfg: &mut BenchConfig, d: DataArgs) {
    let t = &mut cfg.data;
    if d.data.is_some() {
        t.path = d.data;
    }
    if d.label.is_some() {
        t.label = d.label;
    }
    if let Some(i) = d.label_index {
        t.label = None;
        t.label_index = i;
    }
    t.has_header &= !d.no_header;
    t.standardize |= d.standardize;
    t.class_a = d.class_a.unwrap_or(t.class_a);
    t.class_b = d.class_b.unwrap_or(t.class_b);
}

fn build(cli: Cli) -> Result<(Command, BenchConfig, Option<PathBuf>, Option<usize>), BenchError> {
    let c = cli.common;
    let mut cfg = match &c.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    let s = &mut cfg.scenario;
    s.seed = c.seed.unwrap_or(s.seed);
    s.p = c.p.unwrap_or(s.p);
    s.n0 = c.n0.unwrap_or(s.n0);
    s.n1 = c.n1.unwrap_or(s.n1);
    s.test0 = c.test0.unwrap_or(s.test0);
    s.test1 = c.test1.unwrap_or(s.test1);
    s.base_scale = c.base_scale.unwrap_or(s.base_scale);
    s.spike_strength = c.spike_strength.unwrap_or(s.spike_strength);
    s.mean_offset = c.mean_offset.unwrap_or(s.mean_offset);
    if c.spike_rank.is_some() {
        s.spike_rank = c.spike_rank;
    }
    if c.prior0.is_some() {
        s.prior0 = c.prior0;
    }
    cfg.replicates = c.replicates.unwrap_or(cfg.replicates);
    cfg.gamma0 = c.gamma0.unwrap_or(cfg.gamma0);
    if let Some(g) = c.grid {
        cfg.grid = g;
    }
    if c.asymptotic_mean {
        cfg.mean_correction = MeanCorrection::Asymptotic;
    }
    let command = match cli.command {
        Cmd::Histogram => Command::Histogram,
        Cmd::SweepGamma => Command::SweepGamma,
        Cmd::SweepP { p_list } => {
            if let Some(l) = p_list {
                cfg.p_list = l;
            }
            Command::SweepP
        }
        Cmd::Real {
            data,
            ratios,
            train_n1,
            fixed_gamma,
        } => {
            apply_data(&mut cfg, data);
            if let Some(r) = ratios {
                cfg.data.ratios = r;
            }
            cfg.data.n1 = train_n1.unwrap_or(cfg.data.n1);
            cfg.data.tune &= !fixed_gamma;
            Command::Real
        }
        Cmd::Tune { data, model_out } => {
            apply_data(&mut cfg, data);
            Command::Tune { model_out }
        }
    };
    Ok((command, cfg, c.out, c.threads))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    let (command, cfg, out, threads) = build(cli)?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(BenchError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| BenchError::Config(e.to_string()))?;
    }
    let start = Instant::now();
    let csv = run(&command, &cfg)?;
    match &out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| BenchError::Output(format!("{}: {e}", path.display())))?
        }
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| BenchError::Output(e.to_string()))?,
    }
    eprintln!(
        "{}: {} rows in {:.2}s (seed {})",
        command.name(),
        csv.lines().count().saturating_sub(2),
        start.elapsed().as_secs_f64(),
        cfg.scenario.seed
    );
    Ok(())
}
