//! `ecgfm` command-line tool. Every subcommand resolves a JSON config
//! (file, then flags, then `--set` overrides), calls the library and writes
//! a run manifest beside its outputs.

mod jobs;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgfm::nnet::Precision;

#[derive(Parser, Debug)]
#[command(name = "ecgfm", version, about = "ECG foundation-model pipeline at desk scale")]
pub struct Cli {
    /// Seed every random stream of the run derives from.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, default_value = "f32", value_parser = parse_precision)]
    pub precision: Precision,
    /// Dotted config override, e.g. `optimizer.lr0=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse()
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic 12-lead dataset (ECGB records + manifest).
    Synth(SynthArgs),
    /// Filter, resample and window records; optionally split by patient.
    Preprocess(PreprocessArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Fine-tune a pretrained checkpoint with a new head.
    Finetune(FinetuneArgs),
    /// Linear probe: fine-tune only the head.
    Probe(ProbeArgs),
    /// Score predictions against a manifest.
    Eval(EvalArgs),
    /// Run an ablation study.
    Ablate(AblateArgs),
    /// Print the header of an ECGB record or checkpoint as JSON.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of records.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Training window manifest.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Continue from this checkpoint instead of initializing.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub probe: ProbeArgs,
    /// `full` or `linear_probe`.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV with a `record_id` column and one probability column per label.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Score a window manifest with this checkpoint instead.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `youden` or a fixed probability.
    #[arg(long)]
    pub threshold: Option<String>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    /// Directory for per-label ROC and PR curve CSVs.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `loss`, `gamma`, `lead_aug` or `scale` (starts from its defaults).
    #[arg(long)]
    pub study: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub path: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match jobs::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
