//! `hapfuse`: batch commands for data generation, training, evaluation and
//! analysis.

mod commands;
mod meta;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hapfuse_core::config::ExecSlice;

#[derive(Parser, Debug)]
#[command(name = "hapfuse", version, about = "Audio-visual-proprioceptive fusion policies on synthetic manipulation tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate expert demonstrations.
    GenData(GenDataArgs),
    /// Pretrain the audio and proprio encoders and save an initial checkpoint.
    Pretrain(TrainArgs),
    /// Train a policy; writes a metrics log and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint over rollout seeds.
    Eval(EvalArgs),
    /// Train and evaluate one policy per fusion mode.
    Ablate(AblateArgs),
    /// Zero-shot evaluation on shifted containers.
    Generalize(MultiEvalArgs),
    /// Mutual information between fused latents and episode outcome.
    Mi(MultiEvalArgs),
    /// Render a metrics log or a report table as SVG.
    Plot(PlotArgs),
    /// Cabinet score from measured slide, displacement and rotation.
    #[command(allow_negative_numbers = true)]
    Metric(MetricArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed of the stage being run.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of episodes.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Hierarchical,
    BbfmOnly,
    ImmOnly,
    ConcatPs,
    ConcatAps,
    TransformerManiwav,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hierarchical => "hierarchical",
            Mode::BbfmOnly => "bbfm_only",
            Mode::ImmOnly => "imm_only",
            Mode::ConcatPs => "concat_ps",
            Mode::ConcatAps => "concat_aps",
            Mode::TransformerManiwav => "transformer_maniwav",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Slice {
    First,
    Last,
}

impl From<Slice> for ExecSlice {
    fn from(s: Slice) -> Self {
        match s {
            Slice::First => ExecSlice::First,
            Slice::Last => ExecSlice::Last,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Start from this checkpoint's weights (for example a pretrained one).
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_enum)]
    pub exec_slice: Option<Slice>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: EvalOverrides,
    /// Evaluate on a shifted container instead of the base one.
    #[arg(long)]
    pub variant: Option<u32>,
}

#[derive(Args, Debug)]
pub struct MultiEvalArgs {
    /// One or more checkpoints; repeat the flag.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: EvalOverrides,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Modes to compare; all of them by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub modes: Vec<Mode>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// `metrics.tsv`, `ablation.json`, `generalization.json` or `mi.json`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output SVG file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricArgs {
    pub d_slide: f64,
    pub d_disp: f64,
    pub theta_rot: f64,
    /// Comma-separated alpha,beta,gamma.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
