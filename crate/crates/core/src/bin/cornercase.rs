use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cornercase::config::{Overrides, PipelineConfig};
use cornercase::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "cornercase", version, about = "Corner-case scenario generation pipeline")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenarios and the labelled dataset.
    GenData,
    /// Train the edge scorer.
    Train,
    /// Score the test split.
    Eval {
        /// Also run k-fold cross-validation (trains k extra models).
        #[arg(long)]
        k_fold: bool,
    },
    /// Predict corner-case graphs for held-out scenarios.
    Perturb,
    /// Realize predicted graphs and simulate every controller profile.
    Simulate {
        /// Write per-episode CSV traces.
        #[arg(long)]
        traces: bool,
    },
    /// Merge evaluation and simulation results.
    Report,
    /// Run every stage in order.
    All,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let base = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let cfg = base.finalize(&Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
    })?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(PipelineError::ConfigParse("no subcommand given".into()));
    };
    if cfg.workers > 0 {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    match command {
        Command::GenData => {
            let s = pipeline::cmd_gen(&cfg)?;
            println!(
                "{} scenarios, {} instances, positive fraction {:.3}",
                s.n_scenarios, s.n_instances, s.positive_fraction
            );
        }
        Command::Train => {
            let s = pipeline::cmd_train(&cfg)?;
            println!(
                "{} epochs, best epoch {} with validation loss {:.5}",
                s.epochs_run, s.best_epoch, s.best_val_loss
            );
        }
        Command::Eval { k_fold } => {
            let d = pipeline::cmd_eval(&cfg, k_fold)?;
            let r = &d.report;
            println!(
                "{}: accuracy {:.4} precision {:.4} recall {:.4} F1 {:.4} best F1 {:.4} AUC {:.4}",
                d.split, r.accuracy, r.precision, r.recall, r.f1, r.best_f1, r.auc
            );
        }
        Command::Perturb => {
            let d = pipeline::cmd_perturb(&cfg)?;
            println!("{} predicted corner cases", d.perturbations.len());
        }
        Command::Simulate { traces } => {
            let d = pipeline::cmd_sim(&cfg, traces)?;
            print!("{}", d.perturbed.to_text());
        }
        Command::Report => {
            pipeline::cmd_report(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.paths().report("report.txt")).unwrap_or_default());
        }
        Command::All => {
            pipeline::run_all(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.paths().report("report.txt")).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
