use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use textgsl::corpus::Split;
use textgsl::model::Mode;

use crate::config::{DataSection, TrainOverrides};

#[derive(Debug, Parser)]
#[command(name = "textgsl", version = crate::version(), about = "Inductive text classification over per-document word graphs")]
pub struct Cli {
    /// Log progress to stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize and filter a corpus into a document manifest and vocabulary.
    Ingest(IngestArgs),
    /// Build co-occurrence, syntax and semantic word graphs per document.
    BuildGraphs(BuildGraphsArgs),
    /// Train a model and write its checkpoint and run report.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Train every mode for every seed and tabulate test accuracy.
    Ablate(AblateArgs),
    /// Write the learned relation weights of a checkpoint.
    ExportGammas(ExportGammasArgs),
    /// Train on growing fractions of the training split.
    RatioSweep(RatioSweepArgs),
    /// Compare analytic and finite-difference gradients layer by layer.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus file: `split<TAB>label<TAB>text` rows, or one text per line with --labels.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Label file with `split<TAB>label` or `name<TAB>split<TAB>label` rows.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Stopword list, one word per line (data/stopwords_en.txt ships with the tool).
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Drop words seen fewer times than this across the corpus.
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    /// Move this share of training documents to a validation split.
    #[arg(long)]
    pub val_ratio: Option<f64>,
    /// Seed for the validation split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildGraphsArgs {
    /// Document manifest written by ingest.
    #[arg(long)]
    pub docs: PathBuf,
    /// Word vectors, one `word v1 ... vD` per line.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = textgsl::embeddings::DEFAULT_DIM)]
    pub embedding_dim: usize,
    /// CoNLL-U dependency parses keyed by `# doc_id`; without it there are no syntax edges.
    #[arg(long)]
    pub parses: Option<PathBuf>,
    /// Sliding window length for co-occurrence edges.
    #[arg(long, default_value_t = textgsl::graph::DEFAULT_WINDOW)]
    pub window: usize,
    /// Cosine similarity threshold for semantic edges.
    #[arg(long, default_value_t = textgsl::graph::DEFAULT_SEM_THRESHOLD)]
    pub sem_threshold: f64,
    /// Seed for vectors of words missing from the embedding file.
    #[arg(long, default_value_t = 0)]
    pub oov_seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Document manifest (overrides data.docs).
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Graph records (overrides data.graphs).
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    /// Word vectors (overrides data.embeddings).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Vector width (overrides data.embedding_dim; default 300).
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Seed for out-of-vocabulary vectors (overrides data.oov_seed; default 0).
    #[arg(long)]
    pub oov_seed: Option<u64>,
}

impl DataArgs {
    pub fn section(&self) -> DataSection {
        DataSection {
            docs: self.docs.clone(),
            graphs: self.graphs.clone(),
            embeddings: self.embeddings.clone(),
            embedding_dim: self.embedding_dim,
            oov_seed: self.oov_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patience(pub Option<usize>);

fn parse_patience(s: &str) -> Result<Patience, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(Patience(None));
    }
    s.parse::<usize>()
        .map(|n| Patience(Some(n)))
        .map_err(|_| format!("expected an epoch count or `none`, got `{s}`"))
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// Dataset name; selects the default L2 weight (5e-4 for r8 and 20ng, else 5e-5).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Seed for initialization, shuffling, dropout and splits.
    #[arg(long)]
    pub seed: Option<u64>,
    /// full, no-LSL or no-DSL.
    #[arg(long, value_parser = |s: &str| s.parse::<Mode>())]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub l2_weight: Option<f64>,
    #[arg(long)]
    pub dropout_str: Option<f64>,
    #[arg(long)]
    pub dropout_seq: Option<f64>,
    /// Validation share carved from training when the data has none.
    #[arg(long)]
    pub val_ratio: Option<f64>,
    /// Early-stopping patience in epochs, or `none`.
    #[arg(long, value_parser = parse_patience)]
    pub patience: Option<Patience>,
}

impl TrainFlags {
    pub fn overrides(&self) -> TrainOverrides {
        TrainOverrides {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            l2_weight: self.l2_weight,
            dropout_str: self.dropout_str,
            dropout_seq: self.dropout_seq,
            val_ratio: self.val_ratio,
            seed: self.seed,
            mode: self.mode,
            patience: self.patience.map(|p| p.0),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration (see config.schema.json).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON run configuration; only its data section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "test", value_parser = |s: &str| s.parse::<Split>())]
    pub split: Split,
    /// Also write eval.json and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds (default 1,2,3).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ExportGammasArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Format printed to stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Also write gammas.json, gammas.csv and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RatioSweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated training ratios (default 0.3,0.4,0.5,0.6,0.7,0.8).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Tiny,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Scale::Tiny)]
    pub scale: Scale,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write gradcheck.json and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
