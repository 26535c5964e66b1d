use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ofonet::harness::{self, RunConfig};
use ofonet::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "ofonet", version, about = "Distributed model-free feedback optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo experiment described by a config file.
    Run {
        config: PathBuf,
        /// Comma-separated arm names to run (default: all).
        #[arg(long, value_delimiter = ',')]
        arms: Option<Vec<String>>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of replicas, seeded base_seed..base_seed+N.
        #[arg(long)]
        seeds: Option<usize>,
        /// Iterations per run.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Evaluate the convergence bounds for the config's controller block.
    Bounds {
        config: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the optimal steady-state input.
    Optimum { config: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_HYPOTHESIS: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Hypothesis => EXIT_HYPOTHESIS,
        ErrorClass::Runtime => EXIT_RUNTIME,
    })
}

fn run(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Run { config, arms, out, seeds, horizon } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(n) = seeds {
                cfg.experiment.seeds = None;
                cfg.experiment.replicas = n;
            }
            if let Some(t) = horizon {
                cfg.controller.horizon = t;
            }
            if let Some(dir) = out {
                cfg.experiment.output_dir = dir;
            }
            cfg.validate()?;
            let result = harness::run_experiment(&cfg, arms.as_deref())?;
            let files = harness::write_experiment(&result, &cfg.experiment.output_dir, cfg.experiment.write_replica_traces)?;
            println!("config_hash = {}", result.metadata.config_hash);
            println!("files_written = {}", files.len());
            println!("{:<16} {:>9} {:>14} {:>14} {:>14}", "arm", "replicas", "initial_err", "final_err", "median_plateau");
            for arm in &result.arms {
                let s = &arm.summary;
                println!(
                    "{:<16} {:>9} {:>14.6e} {:>14.6e} {:>14.6e}",
                    s.params.name, s.replicas_ok, s.initial_mean_rel_err, s.final_mean_rel_err, s.median_plateau_rel_err
                );
            }
            if result.failures() > 0 {
                eprintln!("{} replica(s) failed; see summary.json", result.failures());
                return Ok(ExitCode::from(EXIT_RUNTIME));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let fixture = harness::Fixture::build(&cfg)?;
            let report = harness::bound_report(&cfg, &fixture)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(path) = out {
                std::fs::write(path, &text)?;
            }
            Ok(if report.hypotheses_violated() { ExitCode::from(EXIT_HYPOTHESIS) } else { ExitCode::SUCCESS })
        }
        Command::Optimum { config } => {
            let cfg = RunConfig::load(&config)?;
            let fixture = harness::Fixture::build(&cfg)?;
            let opt = &fixture.optimum;
            let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
            println!("u_star = {}", list(&opt.u));
            println!("method = {}", opt.method);
            println!("kkt_residual = {:e}", opt.kkt_residual);
            if let Some(g) = opt.cross_check_gap {
                println!("active_set_gap = {g:e}");
            }
            println!("unconstrained_u_star = {}", list(&fixture.unconstrained_optimum));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => exit_for(&e),
    }
}
