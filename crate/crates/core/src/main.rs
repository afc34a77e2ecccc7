use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use wgsr::cli::{cmd_eval, cmd_km, cmd_synth, cmd_train, Sweep, CHECKPOINT_FILE, DATASET_FILE};
use wgsr::config::RunConfig;
use wgsr::dataset::Splits;
use wgsr::pipeline::LossMode;
use wgsr::{Error, Result};

#[derive(Parser)]
#[command(name = "wgsr", version, about = "Waveguide source super-resolution toolkit")]
struct Args {
    /// JSON run configuration; the preset is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Paper)]
    preset: Preset,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print derived constants of the configuration and exit.
    #[arg(long)]
    describe: bool,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Nll,
    Pi,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the labelled dataset.
    Synth {
        /// Train,validation,test sample counts.
        #[arg(long, value_parser = parse_counts)]
        counts: Option<Splits>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Export the Kirchhoff-migration image of one sample.
    Km {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        sample: usize,
    },
    /// Train the network.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subset of min-dist, gaussian, uniform.
        #[arg(long, value_delimiter = ',')]
        sweeps: Option<Vec<Sweep>>,
        /// Replace the network by the exact labels (debugging).
        #[arg(long)]
        perfect_labels: bool,
    },
}

fn parse_counts(s: &str) -> std::result::Result<Splits, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [train, val, test] => Ok(Splits { train, val, test }),
        _ => Err("expected three comma-separated counts: train,val,test".into()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(args: Args) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => match args.preset {
            Preset::Paper => RunConfig::paper(),
            Preset::Desk => RunConfig::desk(),
        },
    };
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(Command::Synth { counts: Some(c), .. }) = &args.command {
        cfg.splits = *c;
    }
    cfg.validate()?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    if args.dump_config {
        println!("{}", cfg.to_json()?);
        return Ok(());
    }
    if args.describe {
        return print_json(&cfg.physics.describe()?);
    }
    let dataset_path = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| out.join(DATASET_FILE));
    match &args.command {
        None => Err(Error::invalid("command", "expected one of synth, km, train, eval")),
        Some(Command::Synth { overwrite, .. }) => {
            let path = cmd_synth(&cfg, &out, *overwrite)?;
            println!("{}", path.display());
            Ok(())
        }
        Some(Command::Km { dataset, sample }) => print_json(&cmd_km(&cfg, &dataset_path(dataset), *sample, &out)?),
        Some(Command::Train { dataset, mode }) => {
            let mode = match mode {
                Mode::Nll => LossMode::NllOnly,
                Mode::Pi => LossMode::NllPlusPi,
            };
            print_json(&cmd_train(&cfg, &dataset_path(dataset), mode, &out)?)
        }
        Some(Command::Eval {
            dataset,
            checkpoint,
            sweeps,
            perfect_labels,
        }) => {
            let sweeps = sweeps.clone().unwrap_or_else(|| Sweep::ALL.to_vec());
            let default_ckpt = out.join(CHECKPOINT_FILE);
            let ckpt: Option<&Path> = match (checkpoint, perfect_labels) {
                (Some(c), _) => Some(c),
                (None, false) => Some(&default_ckpt),
                (None, true) => None,
            };
            print_json(&cmd_eval(&cfg, &dataset_path(dataset), ckpt, &sweeps, *perfect_labels, &out)?)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
