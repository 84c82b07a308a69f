use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use revmask::cli::{self, Overrides};

#[derive(Parser)]
#[command(name = "revmask", version, about = "Reverse-mask image inpainting: train, evaluate, and run models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's root seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inpaint one image with a checkpointed generator
    Inpaint {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize masks and write them with a manifest
    MakeMasks {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Restrict hole ratios to lo,hi
        #[arg(long, value_parser = parse_bucket)]
        bucket: Option<(f64, f64)>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the mixing-weight ablation grid (train + eval per value)
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated weights; defaults to 0,0.1,0.3,0.4,0.5
        #[arg(long)]
        lambdas: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_bucket(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected lo,hi".into());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| "bad lo")?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| "bad hi")?;
    Ok((lo, hi))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => cli::cmd_train(&config, &Overrides { seed, out }),
        Command::Eval { config, checkpoint, seed, out } => {
            cli::cmd_eval(&config, &checkpoint, &Overrides { seed, out })
        }
        Command::Inpaint { checkpoint, image, mask, out } => {
            cli::cmd_inpaint(&checkpoint, &image, &mask, &out)
        }
        Command::MakeMasks { config, count, bucket, seed, out } => {
            cli::cmd_make_masks(&config, count, bucket, &Overrides { seed, out })
        }
        Command::Ablate { config, lambdas, seed, out } => {
            let grid = match lambdas {
                Some(text) => match cli::parse_lambda_list(&text) {
                    Ok(g) => g,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::FAILURE;
                    }
                },
                None => cli::DEFAULT_LAMBDA_GRID.to_vec(),
            };
            cli::cmd_ablate(&config, &grid, &Overrides { seed, out })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
