//! `avse`: corpus synthesis, mixing, training, enhancement and evaluation.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or validation error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "avse", version, about = "Audio-visual speech enhancement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    /// Predicted by the phase sub-network.
    Pr,
    /// Mixture phase.
    Mix,
    /// Griffin-Lim on the enhanced magnitude.
    Gl,
    /// Phase of the clean reference given by --gt-wav.
    Gt,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic speaker corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        speakers: usize,
        #[arg(long)]
        utts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Utterance length in video frames (25 per second).
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        visual_dim: usize,
    },
    /// Mix a reference with 1 to 4 interferers scaled to the reference RMS.
    Mix {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        noise: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the output path with `.manifest.tsv` appended.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train a network with the curriculum from a config file.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance a mixture given the target speaker's visual features.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mix: PathBuf,
        #[arg(long)]
        visual: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = PhaseArg::Pr)]
        phase: PhaseArg,
        #[arg(long)]
        gt_wav: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        gl_iters: usize,
    },
    /// Print SIR, SDR and SAR of an estimate against its references.
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, num_args = 0..)]
        interferers: Vec<PathBuf>,
        #[arg(long)]
        stoi: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("avse: {e}");
            ExitCode::from(e.code())
        }
    }
}
