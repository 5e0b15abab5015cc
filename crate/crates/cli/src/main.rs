use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use marl_core::harness::{
    emit_plot_data, load_config, output_root, run_experiment, run_single, validate_experiment, ExperimentConfig,
    ExperimentSummary, Setting,
};
use marl_core::{MarlError, Result};

/// Decentralized fitted Q-iteration experiments.
#[derive(Debug, Parser)]
#[command(name = "marl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the base point of a cooperative config.
    RunCoop(RunArgs),
    /// Run the base point of a competitive config.
    RunCompet(RunArgs),
    /// Check fixtures, schedules, and design ranks without running.
    Validate {
        config: PathBuf,
    },
    /// Run every point of the config's sweep.
    Sweep {
        config: PathBuf,
        /// Output directory (default: $MARL_OUTPUT_ROOT/<output_dir or name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a results.csv into long-format and per-series plot data.
    Plotdata {
        results: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        group: Option<String>,
        /// Output directory (default: `plots/` next to the results file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Outer FQI iterations K.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    iterations: Option<u64>,
    /// DIGing rounds L per iteration.
    #[arg(long)]
    rounds: Option<usize>,
    /// DIGing step size.
    #[arg(long, value_parser = positive)]
    alpha: Option<f64>,
}

fn positive(text: &str) -> std::result::Result<f64, String> {
    match text.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {text:?}")),
    }
}

fn out_dir(config: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| output_root().join(config.output_subdir()))
}

fn print_summary(summary: &ExperimentSummary) {
    println!("{:<32} {:>12} {:>12} {:>12} {:>10}", "run", "q_error", "q_tilde", "eps_bar", "rank");
    for r in &summary.records {
        println!(
            "{:<32} {:>12.4e} {:>12.4e} {:>12.4e} {:>10}",
            r.run_id,
            r.q_error,
            r.q_tilde_error,
            r.eps_bar_max,
            format!("{}{}", r.design_rank, if r.design_full_rank { "" } else { "!" })
        );
    }
    println!("wrote {}", summary.out_dir.display());
}

fn run(args: RunArgs, expected: Setting) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if config.setting != expected {
        return Err(MarlError::Config(format!(
            "{} is a {} config; use run-{}",
            args.config.display(),
            config.setting.as_str(),
            config.setting.as_str()
        )));
    }
    if let Some(k) = args.iterations {
        config.run.iterations = k as usize;
    }
    if let Some(l) = args.rounds {
        config.run.rounds = l;
    }
    if args.alpha.is_some() {
        config.run.alpha = args.alpha;
    }
    let dir = out_dir(&config, args.out);
    print_summary(&run_single(&config, &dir)?);
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::RunCoop(args) => run(args, Setting::Coop),
        Command::RunCompet(args) => run(args, Setting::Compet),
        Command::Validate { config } => {
            let config = load_config(&config)?;
            for line in validate_experiment(&config)?.lines {
                println!("{line}");
            }
            println!("ok");
            Ok(())
        }
        Command::Sweep { config, out } => {
            let config = load_config(&config)?;
            let dir = out_dir(&config, out);
            print_summary(&run_experiment(&config, &dir)?);
            Ok(())
        }
        Command::Plotdata {
            results,
            x,
            y,
            group,
            out,
        } => {
            let dir = out.unwrap_or_else(|| results.parent().unwrap_or(Path::new(".")).join("plots"));
            let written = emit_plot_data(&results, &x, &y, group.as_deref(), &dir)?;
            println!("{}", written.long_csv.display());
            for path in &written.series {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
