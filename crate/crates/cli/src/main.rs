use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dfmsd_cli::{
    cmd_ablate, cmd_augment_preview, cmd_eval, cmd_export, cmd_spectrum, cmd_train, CommandResult, RunOptions,
};

#[derive(Parser)]
#[command(name = "dfmsd", version, about = "Stage-wise masked feature distillation for tiny detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Steps per stage, overriding the config.
    #[arg(long)]
    steps: Option<usize>,
    /// Pretraining steps per teacher, overriding the config.
    #[arg(long)]
    pretrain_steps: Option<usize>,
}

impl From<RunArgs> for RunOptions {
    fn from(a: RunArgs) -> Self {
        RunOptions {
            config: a.config,
            out: a.out,
            seed: a.seed,
            steps: a.steps,
            pretrain_steps: a.pretrain_steps,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain teachers, distill the student, write checkpoint, log and plot.
    Train(RunArgs),
    /// AP@0.5 and recall of a detector checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Annotation document, or a directory holding annotations.json.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fourier band energies of an image and three augmented variants.
    Spectrum {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the noised and cropped inputs used by masking enhancement.
    AugmentPreview {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every SAL/ME/SFA combination and tabulate AP.
    Ablate(RunArgs),
    /// Write the synthetic splits as annotated image folders.
    Export(RunArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DFMSD_LOG_LEVEL", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a.into()),
        Command::Eval {
            checkpoint,
            data,
            config,
            out,
        } => cmd_eval(&checkpoint, data.as_deref(), config.as_deref(), out.as_deref()).map(|(_, w)| w),
        Command::Spectrum { image, out, seed } => cmd_spectrum(&image, &out, seed),
        Command::AugmentPreview { image, out, seed } => cmd_augment_preview(&image, &out, seed),
        Command::Ablate(a) => cmd_ablate(&a.into()),
        Command::Export(a) => cmd_export(&a.into()),
    };
    let (res, err) = CommandResult::from_result(result);
    if let Some(e) = err {
        eprintln!("error: {e}");
    }
    for a in &res.artifacts {
        log::info!("wrote {}", a.display());
    }
    ExitCode::from(res.exit_code as u8)
}
