use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tgc_core::cli::{self, ExperimentConfig, SplitName};
use tgc_core::Result;

#[derive(Parser)]
#[command(name = "tgc", version = cli::BUILD_ID, about = "Sea-state classifier experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.json, model.ckpt and confusion.csv.
    Train(Common),
    /// Write the synthetic dataset as CSV.
    GenData(Common),
    /// Run the five architecture/loss variants.
    Ablation(Common),
    /// Sweep the slice count.
    Sensitivity(Common),
    /// Sweep the CE : contrastive-clustering weight ratio.
    LossSweep(Common),
    /// Write g(x) rows plus labels for a split.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(c) => {
            let s = cli::run_train(&load(&c)?, &c.out)?;
            let m = s.headline();
            println!(
                "macro P {:.4}  R {:.4}  F1 {:.4}  accuracy {:.4}  (best epoch {})",
                m.macro_precision, m.macro_recall, m.macro_f1, m.accuracy, s.fit.best_epoch
            );
        }
        Command::GenData(c) => {
            let ds = cli::run_gen_data(&load(&c)?, &c.out)?;
            println!("{} windows, class counts {:?}", ds.len(), ds.class_counts());
        }
        Command::Ablation(c) => print_json(&cli::run_ablation(&load(&c)?, &c.out)?.rows),
        Command::Sensitivity(c) => print_json(&cli::run_sensitivity(&load(&c)?, &c.out)?.rows),
        Command::LossSweep(c) => print_json(&cli::run_loss_sweep(&load(&c)?, &c.out)?.rows),
        Command::ExportEmbeddings {
            common,
            checkpoint,
            split,
        } => {
            let path = cli::export_embeddings(&load(&common)?, Path::new(&checkpoint), split, &common.out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
