use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ddstc::cli::{cmd_collect, cmd_report, cmd_run, cmd_sweep, exit_code, sweep_means};
use ddstc::config::ExperimentConfig;

#[derive(Parser)]
#[command(version, about = "Data-driven self-triggered control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the data seed (collect) or the noise seed (run, sweep).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the offline experiment.
    Collect,
    /// Run one closed loop.
    Run,
    /// Run a grid of thresholds and noise seeds.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Write plot series for a run directory (defaults to --out).
    Report { run_dir: Option<PathBuf> },
}

fn load(cli: &Cli, data_seed: bool) -> ddstc::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ddstc::Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        if data_seed {
            cfg.data.seed = s;
        } else {
            cfg.seed = s;
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> ddstc::Result<()> {
    match &cli.command {
        Command::Collect => {
            let r = cmd_collect(&load(cli, true)?, &cli.out)?;
            println!(
                "wrote {} ({} samples); Hankel rank {} of {} at order {}",
                r.path.display(),
                r.samples,
                r.rank,
                r.required,
                r.order
            );
        }
        Command::Run => {
            let s = cmd_run(&load(cli, false)?, &cli.out)?;
            print!("{}", s.to_key_values());
            if s.feasibility_violated() {
                return Err(ddstc::Error::Infeasible);
            }
        }
        Command::Sweep { sigmas, seeds } => {
            let rows = cmd_sweep(&load(cli, false)?, sigmas, *seeds, &cli.out)?;
            println!("sigma runs mean_packets mean_measurements");
            for m in sweep_means(&rows) {
                println!("{} {} {:.2} {:.2}", m.sigma, m.runs, m.mean_packets, m.mean_measurements);
            }
        }
        Command::Report { run_dir } => {
            for p in cmd_report(run_dir.as_ref().unwrap_or(&cli.out))? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
