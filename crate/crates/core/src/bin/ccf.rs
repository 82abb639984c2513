use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ccf::experiment::{cmd_ablate, cmd_eval, cmd_gen, cmd_mask, cmd_pilot, cmd_train, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ccf", version, about = "Balanced LiDAR-camera fusion experiments on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Comma-separated held-out splits (source, rain, night, geo).
    #[arg(long, global = true, value_delimiter = ',')]
    splits: Option<Vec<String>>,

    /// Ablation toggles for `train` / `ablate`: any of qdl,lgdp,ccm or `all`.
    #[arg(long, global = true)]
    ablate: Option<String>,

    /// Overrides the number of training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training and held-out datasets.
    Gen,
    /// Proposal-level pilot study.
    Pilot,
    /// Train a model (or an ablation grid with --ablate).
    Train,
    /// Evaluate trained weights on the held-out splits.
    Eval,
    /// Masking diagnostics.
    Mask,
    /// Train and evaluate an ablation grid.
    Ablate,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("CCF_THREADS") {
        let n: usize = n.parse().with_context(|| format!("CCF_THREADS={n} is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let Some(path) = cli.config.as_ref() else {
        bail!("--config is required");
    };
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.paths.output = out;
    }
    if let Some(splits) = cli.splits {
        cfg.eval.splits = splits;
    }
    if let Some(e) = cli.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;

    match cli.command {
        Command::Gen => {
            for (split, n) in cmd_gen(&cfg)? {
                println!("{split}: {n} scenes");
            }
        }
        Command::Pilot => report(cmd_pilot(&cfg)?),
        Command::Train => {
            for run in cmd_train(&cfg, cli.ablate.as_deref())? {
                println!("{}: {}", run.name, run.dir.display());
            }
        }
        Command::Eval => report(cmd_eval(&cfg)?),
        Command::Mask => report(cmd_mask(&cfg)?),
        Command::Ablate => report(cmd_ablate(&cfg, cli.ablate.as_deref().unwrap_or("all"))?),
    }
    Ok(())
}

fn report(paths: Vec<PathBuf>) {
    for p in paths {
        println!("{}", p.display());
    }
}
