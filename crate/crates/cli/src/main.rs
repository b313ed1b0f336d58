use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nht_cli::calc::{evaluate, TheoryQuery};
use nht_cli::config::{SweepAxis, TraceFormat};
use nht_cli::experiment::default_workers;
use nht_cli::output::to_json;
use nht_cli::summary::markdown;
use nht_cli::{
    load_config, resummarize, run_single, run_sweep, CliError, ExperimentConfig, Overrides,
};

/// Norm-hierarchy transition experiments.
#[derive(Parser)]
#[command(name = "nht", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured cell once per seed.
    Run(RunArgs),
    /// Sweep along the configured axis.
    Sweep(SweepArgs),
    /// Sweep the full weight-decay x correlation grid.
    Phase(SweepArgs),
    /// Closed-form contraction quantities.
    Theory(TheoryArgs),
    /// Recompute aggregates from the cell files of a finished sweep.
    Summary {
        /// Sweep output directory.
        #[arg(long, env = "NHT_OUT_DIR")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// One seed or a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory; beats the environment and the config file.
    #[arg(long, env = "NHT_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Zero the loss gradient so only decay and noise act.
    #[arg(long)]
    decay_only: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: RunArgs,
    /// Parallel runs; defaults to the available cores minus one.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    /// Effective contraction rate; defaults to eta*lambda.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    v_sc: f64,
    #[arg(long)]
    v_st: f64,
    /// Rate multiplier for the lower bound.
    #[arg(long, default_value_t = 2.0)]
    c: f64,
    /// Training budget in steps for the emergence check.
    #[arg(long)]
    budget: Option<u64>,
}

fn load(args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = load_config(&args.config)?;
    cfg.apply(&Overrides {
        seeds: args.seed.clone(),
        out: args.out.clone(),
        format: args.format.map(|f| match f {
            Format::Csv => TraceFormat::Csv,
            Format::Json => TraceFormat::Json,
        }),
        decay_only: args.decay_only,
    })?;
    Ok(cfg)
}

fn sweep(args: &SweepArgs, grid: bool) -> anyhow::Result<()> {
    let cfg = load(&args.common)?;
    let axis = if grid {
        SweepAxis::Grid
    } else {
        cfg.sweep.axis
    };
    let workers = args.workers.unwrap_or_else(default_workers);
    let outcome = run_sweep(&cfg, axis, workers)?;
    print!("{}", markdown(&outcome.summary));
    println!(
        "wrote {} cells to {}",
        outcome.records.len(),
        cfg.output.dir.display()
    );
    if outcome.failed() > 0 {
        return Err(CliError::PartialSweep {
            failed: outcome.failed(),
            total: outcome.records.len(),
        }
        .into());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load(&args)?;
            for r in run_single(&cfg)? {
                let rep = r
                    .report
                    .as_ref()
                    .context("successful runs carry a report")?;
                let clean = r.final_metrics.as_ref().and_then(|m| m.acc_clean);
                println!(
                    "{}: regime {} decay {:.4} clean {} hash {}",
                    r.cell_id,
                    rep.regime,
                    rep.decay_from_peak,
                    clean.map_or("-".into(), |c| format!("{c:.4}")),
                    &r.config_hash[..12]
                );
                if let Some(e) = &r.escape {
                    println!(
                        "  escape: measured {:?} predicted {} (checkpoint interval {})",
                        e.measured_step, e.predicted_step, e.checkpoint_interval
                    );
                }
            }
        }
        Command::Sweep(args) => sweep(&args, false)?,
        Command::Phase(args) => sweep(&args, true)?,
        Command::Theory(t) => {
            let answer = evaluate(&TheoryQuery {
                eta: t.eta,
                lambda: t.lambda,
                sigma2: t.sigma2,
                gamma: t.gamma,
                v_sc: t.v_sc,
                v_st: t.v_st,
                c: t.c,
                budget: t.budget,
            })
            .map_err(CliError::from)?;
            print!("{}", to_json(&answer));
        }
        Command::Summary { out } => {
            let summary = resummarize(&out)?;
            print!("{}", markdown(&summary));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}
