//! `copyloc` command-line driver. Stages exchange plain files: feature
//! sequences (`.vcf`), similarity matrices (`.vcs`), and JSONL annotations,
//! predictions and pseudo labels.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "copyloc",
    version,
    about = "Copied-segment localization between video pairs"
)]
struct Cli {
    /// key = value file; entries become flags of the chosen subcommand, explicit flags win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for per-pair parallelism (0 = all cores)
    #[arg(long, global = true, env = "COPYLOC_JOBS", default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic copied pairs with known ground truth
    Gen(GenArgs),
    /// Enhance pair features with the attention stack
    Attn(AttnArgs),
    /// Build similarity matrices for every pair
    Simmat(SimmatArgs),
    /// Localize copied segments on similarity matrices
    Detect(DetectArgs),
    /// Score predictions against annotations
    Eval(EvalArgs),
    /// Turn detections into pseudo labels and assemble the semi-supervised loss
    Pseudo(PseudoArgs),
    /// Time linear vs vanilla attention across sequence lengths
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory (features/, annotations.jsonl, manifest.json)
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the first pair; pair i uses seed + i
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of pairs
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    /// easy | hard | negative
    #[arg(long, default_value = "easy")]
    pub preset: String,
    /// Fraction of pairs replaced by uncopied negatives, spread evenly
    #[arg(long, default_value_t = 0.0)]
    pub negative_fraction: f64,
    /// Feature dimension
    #[arg(long, default_value_t = copyloc::DEFAULT_DIM)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct PairInputs {
    /// JSONL listing the pairs (annotation or prediction schema)
    #[arg(long)]
    pub pairs: PathBuf,
    /// Directory holding `<video_id>.vcf` feature files
    #[arg(long)]
    pub features: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[command(flatten)]
    pub input: PairInputs,
    /// Weight manifest (JSON with a sibling .bin blob)
    #[arg(long, conflicts_with = "random_weights")]
    pub weights: Option<PathBuf>,
    /// Use seeded random weights instead of a weight file
    #[arg(long, value_name = "SEED")]
    pub random_weights: Option<u64>,
    /// Layers of the random weights
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// Heads of the random weights
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    /// Hidden width of the random video head
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    /// Also write the weights in use to this manifest path
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
    /// vanilla | linear
    #[arg(long, default_value = "linear")]
    pub kernel: String,
    /// Output directory for per-pair enhanced features and video_probs.jsonl
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimmatArgs {
    #[command(flatten)]
    pub input: PairInputs,
    /// Features come from `attn` output (per-pair files) instead of `<video_id>.vcf`
    #[arg(long)]
    pub enhanced: bool,
    /// Output directory for `<query>__<reference>.vcs`
    #[arg(long)]
    pub out: PathBuf,
    /// Softmax temperature
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    /// Target grid HxW, or `none` to keep the native size
    #[arg(long, default_value = "640x640")]
    pub resize: String,
    /// Dual-softmax `before` or `after` resizing
    #[arg(long, default_value = "before")]
    pub order: String,
    /// Keep the temperature-scaled cosine matrix without dual-softmax
    #[arg(long)]
    pub raw: bool,
    /// Also write a PGM image next to each matrix
    #[arg(long)]
    pub export_pgm: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// JSONL listing the pairs
    #[arg(long)]
    pub pairs: PathBuf,
    /// Directory of `.vcs` matrices written by `simmat`
    #[arg(long)]
    pub sims: PathBuf,
    /// hv | tn | dp | dtw | cc
    #[arg(long, default_value = "cc")]
    pub method: String,
    /// Detector parameter override, repeatable (e.g. t_bin=0.6)
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// video_probs.jsonl from `attn`, attached to the predictions
    #[arg(long)]
    pub video_probs: Option<PathBuf>,
    /// Output predictions JSONL
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction JSONL (from `detect`)
    #[arg(long)]
    pub predictions: PathBuf,
    /// Ground-truth annotation JSONL
    #[arg(long)]
    pub annotations: PathBuf,
    /// JSONL of `{query_id, ref_id, groups}` merged into the annotations
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Video-level decision: boxes | head | either
    #[arg(long, default_value = "boxes")]
    pub rule: String,
    /// table | json
    #[arg(long, default_value = "table")]
    pub format: String,
    /// Also write the JSON report here
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PseudoArgs {
    /// Teacher detections (prediction JSONL)
    #[arg(long)]
    pub detections: PathBuf,
    /// Annotation JSONL carrying video-level weak labels
    #[arg(long)]
    pub weak: Option<PathBuf>,
    /// Confidence threshold
    #[arg(long, default_value_t = copyloc::semisup::DEFAULT_THETA)]
    pub theta: f64,
    /// Weight of the unsupervised loss term
    #[arg(long, default_value_t = copyloc::losses::DEFAULT_LAMBDA_U)]
    pub lambda_u: f64,
    /// Regression weight inside the segment loss
    #[arg(long, default_value_t = copyloc::losses::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Labeled annotations for the supervised term
    #[arg(long, requires = "student")]
    pub labeled: Option<PathBuf>,
    /// Student predictions for all labeled and pseudo-labeled pairs
    #[arg(long)]
    pub student: Option<PathBuf>,
    /// Output pseudo-label JSONL
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated sequence lengths
    #[arg(long, default_value = "1024,2048,4096", value_delimiter = ',')]
    pub lengths: Vec<usize>,
    /// Feature dimension of the random inputs
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Repetitions per point; the fastest is kept
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Seed for the random inputs
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

fn command() -> clap::Command {
    Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true))
}

/// Prints one JSON error line on stderr.
fn report_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<copyloc::Error>())
        .map_or("Error", copyloc::Error::kind)
}

fn parse_cli(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let first = command().try_get_matches_from(&args)?;
    let cli = Cli::from_arg_matches(&first)?;
    let Some(path) = &cli.config else {
        return Ok(cli);
    };
    let (name, _) = first.subcommand().expect("subcommand is required");
    let flags = config::parse(path)
        .and_then(|entries| config::to_flags(&command(), name, &entries))
        .map_err(|e| command().error(clap::error::ErrorKind::InvalidValue, format!("{e:#}")))?;
    // config flags go right after the subcommand name, so user flags override them
    let at = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(i, a)| {
            a.to_str() == Some(name) && !matches!(args[i - 1].to_str(), Some("--config" | "--jobs"))
        })
        .map(|(i, _)| i + 1)
        .expect("subcommand present");
    let mut merged = args[..at].to_vec();
    merged.extend(flags.into_iter().map(OsString::from));
    merged.extend_from_slice(&args[at..]);
    Cli::from_arg_matches(&command().try_get_matches_from(merged)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let go = move || match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Attn(a) => commands::attn(a),
        Command::Simmat(a) => commands::simmat(a),
        Command::Detect(a) => commands::detect(a),
        Command::Eval(a) => commands::eval(a),
        Command::Pseudo(a) => commands::pseudo(a),
        Command::Bench(a) => commands::bench(a),
    };
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build()?;
        pool.install(go)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = cli.jobs;
        go()
    }
}

fn main() -> ExitCode {
    let cli = match parse_cli(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let text = e.to_string();
            report_error(
                "Usage",
                text.lines()
                    .next()
                    .unwrap_or("")
                    .trim_start_matches("error: "),
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_is_consistent() {
        command().debug_assert();
    }
}
