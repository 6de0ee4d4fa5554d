use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use esce::harness::{self, ExperimentConfig, Mode, RunStatus};
use esce::Error;

const EXIT_BUDGET: u8 = 3;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "esce", version, about = "Sufficient-state extraction experiments on delayed-reward toys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config.
    Run(RunArgs),
    /// Compare finished runs on one metric.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "window_mean")]
        metric: String,
        #[arg(long, short, default_value = "compare")]
        out: PathBuf,
    },
    /// Chart metrics from one or more metric logs.
    Chart {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Comma-separated metric names.
        #[arg(long, short, default_value = "window_mean", value_delimiter = ',')]
        metric: Vec<String>,
        #[arg(long, short, default_value = "chart.svg")]
        out: PathBuf,
    },
    /// Dump the exact sufficiency oracle for a config and checkpoint.
    Oracle {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = esce::env::DEFAULT_EPSILON)]
        epsilon: f64,
        /// Only print sufficient states.
        #[arg(long)]
        sufficient_only: bool,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    hindsight: Option<bool>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, value_delimiter = ',', env = "ESCE_SEED")]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    outer_iterations: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    pool_capacity: Option<usize>,
    #[arg(long, env = "ESCE_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    no_charts: bool,
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(env) = &args.env {
        config.env.name = match env.as_str() {
            "delayed-chain" => esce::env::EnvName::DelayedChain,
            "trap-grid" => esce::env::EnvName::TrapGrid,
            other => return Err(Error::Config(format!("unknown environment `{other}`")).into()),
        };
    }
    if let Some(h) = args.hindsight {
        config.env.hindsight = h;
    }
    Ok(config)
}

fn run(args: RunArgs) -> anyhow::Result<RunStatus> {
    let mut config = load_config(&args.config)?;
    if let Some(m) = &args.mode {
        config.mode = m.parse::<Mode>()?;
    }
    if let Some(s) = args.seeds {
        config.seeds = s;
    }
    if let Some(n) = args.outer_iterations {
        config.outer_iterations = n;
    }
    if let Some(k) = args.workers {
        config.agent.workers = k;
    }
    if let Some(s) = args.sigma {
        config.esce.sigma = s;
    }
    if let Some(t) = args.tau {
        config.esce.tau = t;
    }
    if let Some(c) = args.pool_capacity {
        config.pools.capacity = c;
    }
    if let Some(o) = args.output_dir {
        config.output_dir = o;
    }
    if args.no_charts {
        config.charts = false;
    }
    config.validate()?;
    let summary = harness::run(&config)?;
    for s in &summary.seeds {
        println!(
            "seed {}: {:?} after {} iterations, final window mean {}",
            s.seed,
            s.status,
            s.iterations,
            s.final_window_mean.map_or("n/a".to_string(), |m| format!("{m:.4}"))
        );
    }
    println!("logs in {}", config.output_dir.display());
    Ok(summary.status)
}

fn dispatch(cli: Cli) -> anyhow::Result<RunStatus> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Compare { runs, metric, out } => {
            let table = harness::compare(&runs, &metric, &out)?;
            print!("{}", table.to_tsv());
            Ok(RunStatus::Success)
        }
        Command::Chart { logs, metric, out } => {
            harness::emit_chart(&logs, &metric, &out)?;
            println!("wrote {}", out.display());
            Ok(RunStatus::Success)
        }
        Command::Oracle {
            config,
            checkpoint,
            epsilon,
            sufficient_only,
        } => {
            let config = load_config(&config)?;
            let rows = harness::oracle_dump(&config, checkpoint.as_deref(), epsilon)?;
            let mut stdout = std::io::stdout().lock();
            for r in rows.iter().filter(|r| r.sufficient || !sufficient_only) {
                let line = serde_json::to_string(r).context("serialising oracle row")?;
                match writeln!(stdout, "{line}") {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
                    Err(e) => return Err(e.into()),
                }
            }
            Ok(RunStatus::Success)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(RunStatus::Success) => ExitCode::SUCCESS,
        Ok(RunStatus::BudgetExhausted) => ExitCode::from(EXIT_BUDGET),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::Config(_) | Error::UnknownMetric { .. } | Error::Incompatible(_))
            );
            ExitCode::from(if config_error { EXIT_CONFIG } else { 1 })
        }
    }
}
