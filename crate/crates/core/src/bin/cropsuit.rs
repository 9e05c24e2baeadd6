use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cropsuit::pipeline::{self, RunConfig};
use cropsuit::{Error, Result};

#[derive(Parser)]
#[command(name = "cropsuit", version, about = "Crop-suitability pipeline")]
struct Cli {
    /// JSON run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the planted synthetic world.
    Synth,
    /// Build feature tables, the balanced split and the scaler.
    Features,
    /// Train the configured models.
    Train,
    /// Score the trained models on the test split.
    Eval,
    /// Permutation importance and regional integrated gradients.
    Attribute,
    /// Scenario projections, ensembles and change maps.
    Project,
    /// Render figures and a text summary.
    Report,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {t} threads: {e}")))?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match cli.command {
        Command::Synth => pipeline::run_synth(&cfg),
        Command::Features => pipeline::run_features(&cfg),
        Command::Train => {
            for (kind, s) in pipeline::run_train(&cfg)? {
                println!("{kind}: best epoch {} validation macro-F1 {:.4}", s.best_epoch, s.best_val_macro_f1);
            }
            Ok(())
        }
        Command::Eval => {
            for (kind, report) in pipeline::run_eval(&cfg)? {
                println!("{kind}\n{report}");
            }
            Ok(())
        }
        Command::Attribute => pipeline::run_attribute(&cfg),
        Command::Project => {
            for (kind, bands) in pipeline::run_project(&cfg)? {
                for b in bands {
                    println!(
                        "{kind} {} {}: class-3 change north {:+.3} south {:+.3}",
                        b.ssp, b.period, b.north[3], b.south[3]
                    );
                }
            }
            Ok(())
        }
        Command::Report => pipeline::run_report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
