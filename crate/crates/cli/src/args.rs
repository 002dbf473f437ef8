use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "hanmlm",
    version,
    about = "Masked-language-model toolkit for Hangul with a cross-lingual representation regularizer",
    arg_required_else_help = true
)]
pub struct Cli {
    /// Directory that relative output paths are resolved against.
    /// Overrides the HANMLM_OUTPUT_ROOT environment variable.
    #[arg(long, global = true, value_name = "DIR")]
    pub output_root: Option<PathBuf>,

    /// Write the run manifest here instead of next to the outputs.
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw sources into a JSON-lines corpus.
    Ingest(IngestArgs),
    /// Replace syllables through a substitution map.
    MapSyllables(MapSyllablesArgs),
    /// List syllables that a vocabulary cannot cover, most frequent first.
    FindNovel(FindNovelArgs),
    /// Build a WordPiece vocabulary.
    BuildVocab(BuildVocabArgs),
    /// Print the subword pieces of each input line.
    Tokenize(TokenizeArgs),
    /// Train from scratch or continue a checkpoint, optionally regularized.
    Train(TrainArgs),
    /// Score checkpoints on corpora: log-perplexity and MLM accuracy.
    Evaluate(EvaluateArgs),
    /// Train and evaluate one model per λ from the same base.
    Sweep(SweepArgs),
    /// Re-render a saved report or sweep, or plot training logs.
    Report(ReportArgs),
    /// Write the seeded toy corpora of languages A and B.
    GenerateSynthetic(GenerateArgs),
    /// Re-execute the run recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IngestFormat {
    Jsonl,
    HtmlDir,
    NliTsv,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: IngestFormat,
    /// Extraction rules (JSON) for `html-dir`.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also split documents: this fraction goes to `--out`, the rest to
    /// `--valid-out`.
    #[arg(long, requires = "valid_out")]
    pub train_fraction: Option<f64>,
    #[arg(long, requires = "train_fraction")]
    pub valid_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct MapSyllablesArgs {
    /// Corpus (`.jsonl`) or text file with one sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Tab-separated `source<TAB>target` map; the built-in map if omitted.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FindNovelArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// TSV destination; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// Corpus or text files; repeat the flag for several.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub min_frequency: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    /// File to tokenize line by line.
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    pub input: Option<PathBuf>,
    /// Literal text to tokenize.
    #[arg(long)]
    pub text: Option<String>,
    /// Print token ids instead of pieces.
    #[arg(long)]
    pub ids: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings shared by `train` and `sweep`. Unset flags fall back to the
/// config file, then to the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// JSON with optional `model`, `train`, `eval` objects and `max_len`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub mask_probability: Option<f64>,
    /// `pure-mask` or `bert-80-10-10`.
    #[arg(long)]
    pub masking: Option<String>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    /// Disable dropout in the trained model.
    #[arg(long)]
    pub no_dropout: bool,
    /// Encoder layer compared by the penalty (0-based); the last if omitted.
    #[arg(long)]
    pub representation_layer: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Threads per training run; only 1 is bit-reproducible.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Longest encoded sentence, special tokens included.
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus (`.jsonl` or one sentence per line).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Checkpoint to continue; also the frozen reference for the penalty.
    /// Without it a fresh model is initialized.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub intermediate_size: Option<usize>,
    #[arg(long)]
    pub max_position: Option<usize>,
    /// Seed for a fresh initialization.
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalFlags {
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Comma-separated, one per repeat.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub eval_mask_probability: Option<f64>,
    /// `per-token` or `per-sentence`.
    #[arg(long)]
    pub normalization: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    TableText,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// `name=path` or `path`; repeat for several models.
    #[arg(long, required = true)]
    pub model: Vec<String>,
    /// Comma-separated `name=path` list of evaluation corpora.
    #[arg(long, required = true, value_delimiter = ',')]
    pub corpora: Vec<String>,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// JSON config file; only its `eval` object and `max_len` are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Write only this format; all three if omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `start:end:step` or a comma-separated list.
    #[arg(long)]
    pub lambdas: String,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, required = true, value_delimiter = ',')]
    pub corpora: Vec<String>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Runs trained at once.
    #[arg(long, default_value_t = 1)]
    pub parallel_runs: usize,
    /// Keep each trained model as `models/lambda-<λ>.ckpt`.
    #[arg(long)]
    pub save_models: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveField {
    CrossLingualL2,
    MlmLoss,
    Penalty,
    TotalLoss,
    Lr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveAxis {
    Step,
    Epoch,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Saved `report.json` or `sweep.json` to re-render.
    #[arg(long, conflicts_with = "logs", required_unless_present = "logs")]
    pub input: Option<PathBuf>,
    /// Comma-separated `name=path` list of training logs to plot.
    #[arg(long, value_delimiter = ',')]
    pub logs: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "table-text")]
    pub format: Format,
    #[arg(long, value_enum, default_value = "cross-lingual-l2")]
    pub field: CurveField,
    #[arg(long, value_enum, default_value = "epoch")]
    pub by: CurveAxis,
    /// File for `--input` (stdout if omitted); directory for `--logs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 300)]
    pub test: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest_path: PathBuf,
}
