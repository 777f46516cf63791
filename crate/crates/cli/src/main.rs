mod commands;
mod config;
mod plot;

use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// Stroke-lesion segmentation toolkit: data preparation, training,
/// evaluation and parameter accounting for the 2D/3D fusion network.
#[derive(Debug, Parser)]
#[command(name = "dunet", version)]
struct Cli {
    /// Run configuration (TOML with sections data, arch, loss, train, eval).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes synthetic phantom cases and a manifest listing them.
    Synth {
        #[arg(long, default_value_t = 4)]
        cases: usize,
        #[arg(long, default_value_t = 8)]
        depth: usize,
        /// Container: nii.gz, nii or bin.
        #[arg(long, default_value = "nii.gz")]
        format: String,
    },
    /// Preprocesses the cases of a manifest into a stack store at --out.
    Prepare {
        /// Text file with one case id per line, next to the case files.
        #[arg(long)]
        manifest: PathBuf,
        /// Output resolution; overrides data.preprocess.size.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Trains on the training split of the store.
    Train {
        /// Overrides data.store.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Continues from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Scores a checkpoint on the validation split (or every case).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
        /// Evaluate every case in the store, not just the validation split.
        #[arg(long)]
        all: bool,
    },
    /// Writes a binary lesion mask aligned to an input image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image volume, e.g. <case>_t1.nii.gz.
        #[arg(long)]
        image: PathBuf,
    },
    /// Prints total and trainable parameter counts.
    CountParams {
        /// Variant name, e.g. se-add-23 or unet2d-original.
        #[arg(long, conflicts_with = "all")]
        arch: Option<String>,
        #[arg(long)]
        all: bool,
    },
    /// Renders DSC curves and box plots as SVG.
    Plot {
        /// History file written by train; repeatable.
        #[arg(long = "history")]
        histories: Vec<PathBuf>,
        /// Curve bundle written by compare-losses.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// per_case.json written by eval; repeatable.
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
    },
    /// Trains once per loss from identical initial weights and records the
    /// DSC curves.
    CompareLosses {
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = || RunConfig::resolve(cli.config.as_deref(), cli.seed);
    let out = &cli.out;
    match &cli.command {
        Command::Synth { cases, depth, format } => commands::synth(out, *cases, *depth, cli.seed.unwrap_or(0), format),
        Command::Prepare { manifest, size } => commands::prepare(&cfg()?, manifest, out, *size),
        Command::Train { store, resume } => commands::train(&cfg()?, out, store.as_deref(), resume.as_deref()),
        Command::Eval { checkpoint, store, all } => commands::eval(&cfg()?, checkpoint, out, store.as_deref(), *all),
        Command::Predict { checkpoint, image } => commands::predict(&cfg()?, checkpoint, image, out),
        Command::CountParams { arch, all } => commands::count_params(arch.as_deref(), *all),
        Command::Plot {
            histories,
            bundle,
            reports,
        } => commands::plot(histories, bundle.as_deref(), reports, out),
        Command::CompareLosses { store } => commands::compare(&cfg()?, out, store.as_deref()),
    }
}

/// Numerical blow-ups are failures of the run, not of its inputs.
fn is_internal(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<dunet_core::Error>(),
            Some(dunet_core::Error::NonFiniteLoss { .. })
        )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_internal(&e) { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(2),
    }
}
