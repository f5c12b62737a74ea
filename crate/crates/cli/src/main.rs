use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use matchprod::config::RunConfig;
use matchprod::io::{fmt_f64, Table};
use matchprod::montecarlo::run_montecarlo;
use matchprod::pipeline::{self, run_pipeline, run_stage, tail_row, Stage};
use matchprod::{Error, ProductionForm};

#[derive(Parser)]
#[command(name = "matchprod", version, about = "Simulate matched employer-employee panels and estimate productivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation and bootstrap.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding every input and output table.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Comma-separated sectors to estimate.
    #[arg(long, global = true, value_delimiter = ',')]
    sectors: Option<Vec<u32>>,
    /// Bootstrap replicates for production-function standard errors.
    #[arg(long, global = true)]
    bootstrap: Option<usize>,
    /// Polynomial degree of the first-stage proxy.
    #[arg(long, global = true)]
    degree: Option<usize>,
    /// Log threshold of the tail fit.
    #[arg(long, global = true, allow_hyphen_values = true)]
    threshold: Option<f64>,
    /// Monte Carlo replicates.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Production form of the estimator.
    #[arg(long, global = true, value_enum)]
    form: Option<Form>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    Ces,
    Cd,
}

#[derive(Subcommand)]
enum Command {
    /// Write firms.csv and matches.csv.
    Simulate,
    /// Sample screens and the largest connected set.
    Screen,
    /// Two-way fixed-effects earnings regression.
    Akm,
    /// Firm-year top and non-top worker qualities.
    Quality,
    /// Pareto tail fit of firm qualities, or of a one-column value file.
    Paretofit {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Production-function estimation and TFP.
    EstimatePf,
    /// Match-efficiency estimation.
    Matcheff,
    /// Measured productivity, aggregation and decompositions.
    Decompose,
    /// Parameter recovery over simulated replicates.
    Montecarlo,
    /// Every stage from simulate to decompose.
    Pipeline,
}

fn resolve(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.set_seed(s);
    }
    if let Some(s) = &c.sectors {
        cfg.sectors = s.clone();
    }
    if let Some(b) = c.bootstrap {
        cfg.pf.bootstrap = b;
    }
    if let Some(d) = c.degree {
        cfg.pf.degree = d;
    }
    if let Some(t) = c.threshold {
        cfg.pareto.threshold = t;
    }
    if let Some(r) = c.reps {
        cfg.montecarlo.reps = r;
    }
    if let Some(f) = c.form {
        cfg.pf.form = match f {
            Form::Ces => ProductionForm::Ces,
            Form::Cd => ProductionForm::Cd,
        };
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = resolve(&cli.common)?;
    let out = &cli.common.out;
    let stage = match cli.command {
        Command::Simulate => Stage::Simulate,
        Command::Screen => Stage::Screen,
        Command::Akm => Stage::Akm,
        Command::Quality => Stage::Quality,
        Command::Paretofit { input: Some(path) } => {
            let fit = pipeline::paretofit_values(&path, cfg.pareto.threshold).map_err(|e| e.in_stage("paretofit"))?;
            println!("lambda_hat={} se={} r2={} threshold={} n_used={}", fit.lambda_hat, fit.standard_error, fit.r_squared, fit.threshold, fit.n_used);
            std::fs::create_dir_all(out)?;
            let mut t = Table::new(&["series", "sample", "threshold", "lambda_hat", "standard_error", "r_squared", "intercept", "n_used"]);
            t.push(tail_row("values", &path.display().to_string(), &fit));
            t.write(&out.join(pipeline::PARETOFIT))?;
            return pipeline::write_manifest(&cfg, out);
        }
        Command::Paretofit { input: None } => Stage::Paretofit,
        Command::EstimatePf => Stage::EstimatePf,
        Command::Matcheff => Stage::Matcheff,
        Command::Decompose => Stage::Decompose,
        Command::Montecarlo => {
            let rows = run_montecarlo(&cfg).map_err(|e| e.in_stage("montecarlo"))?;
            let mut t = Table::new(&["parameter", "truth", "median", "mad", "median_abs_error", "reps"]);
            println!("{:<10} {:>10} {:>10} {:>10} {:>10}", "parameter", "truth", "median", "mad", "abs_err");
            for r in &rows {
                println!("{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10.4}", r.parameter, r.truth, r.median, r.mad, r.median_abs_error);
                t.push(vec![r.parameter.clone(), fmt_f64(r.truth), fmt_f64(r.median), fmt_f64(r.mad), fmt_f64(r.median_abs_error), r.reps.to_string()]);
            }
            std::fs::create_dir_all(out)?;
            t.write(&out.join("montecarlo.csv"))?;
            return pipeline::write_manifest(&cfg, out);
        }
        Command::Pipeline => return run_pipeline(&cfg, out),
    };
    run_stage(stage, &cfg, out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
