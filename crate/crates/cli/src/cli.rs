use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "clm", version, about = "Byte-level language modelling of JPEG files")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a labelled image collection into a JPEG corpus with a manifest.
    BuildCorpus(BuildCorpusArgs),
    /// Train a model on a corpus (optionally resuming a checkpoint).
    Train(TrainArgs),
    /// Fine-tune a checkpoint supervising only one trailing condition token.
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Standalone codec utilities.
    #[command(subcommand)]
    Codec(CodecCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dataset {
    Mnist,
    Cifar,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlanArg {
    Every,
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AugmentArg {
    None,
    Mnist,
    Cifar,
}

#[derive(Debug, Args)]
pub struct BuildCorpusArgs {
    #[arg(long, value_enum)]
    pub dataset: Dataset,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated subset of 30,50,60,70,75,80,85,90,92.
    #[arg(long, value_delimiter = ',')]
    pub qualities: Option<Vec<u32>>,
    #[arg(long, default_value_t = 1)]
    pub multiplier: usize,
    #[arg(long, value_enum, default_value_t = PlanArg::Every)]
    pub quality_plan: PlanArg,
    /// Defaults to the dataset's own policy when --multiplier > 1, else none.
    #[arg(long, value_enum)]
    pub augment: Option<AugmentArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// MNIST training images and labels (IDX).
    #[arg(long, requires = "train_labels")]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long, requires = "val_labels")]
    pub val_images: Option<PathBuf>,
    #[arg(long)]
    pub val_labels: Option<PathBuf>,
    /// CIFAR-10 training batch files.
    #[arg(long = "train-batch")]
    pub train_batches: Vec<PathBuf>,
    #[arg(long = "val-batch")]
    pub val_batches: Vec<PathBuf>,
    /// Synthetic dataset classes.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
    pub classes: Vec<u8>,
    #[arg(long, default_value_t = 20)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 5)]
    pub val_per_class: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ModelOverrides {
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct HyperOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Stop once an epoch's mean loss falls below this value.
    #[arg(long)]
    pub target_loss: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory or its manifest.json.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with `model`, `hyperparams` and `generation_probability`
    /// entries; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from this checkpoint's weights, optimizer state and step.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub generation_probability: Option<f64>,
    #[command(flatten)]
    pub model: ModelOverrides,
    #[command(flatten)]
    pub hyper: HyperOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Quality,
    Class,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub target: TargetArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub hyper: HyperOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Pretrained,
    Finetuned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegionArg {
    All,
    Bytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FramingArg {
    Conditioned,
    Recognition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecodeArg {
    Greedy,
    Beam,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Predict quality and class for every file of a split.
    Recognize(RecognizeArgs),
    /// Tagging, detection and correction on one-byte substitutions.
    Anomaly(AnomalyArgs),
    /// Generate one file per (quality, class) prompt.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct RecognizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value_t = PhaseArg::Pretrained)]
    pub phase: PhaseArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnomalyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    /// Files taken per class, in manifest order.
    #[arg(long, default_value_t = 1)]
    pub files: usize,
    /// Only consider files of this quality.
    #[arg(long)]
    pub quality: Option<u32>,
    /// `full` or `sampled:N`.
    #[arg(long, default_value = "sampled:2000")]
    pub mode: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RegionArg::Bytes)]
    pub region: RegionArg,
    #[arg(long, value_enum, default_value_t = FramingArg::Conditioned)]
    pub correction_framing: FramingArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = DecodeArg::Greedy)]
    pub decode: DecodeArg,
    #[arg(long, default_value_t = clm_core::eval::DEFAULT_BEAMS)]
    pub beams: usize,
    #[arg(long, default_value_t = clm_core::eval::DEFAULT_TOP_P)]
    pub top_p: f64,
    #[arg(long, value_delimiter = ',', default_value = "30,50,60,70,75,80,85,90,92")]
    pub qualities: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
    pub classes: Vec<u8>,
    /// Total sequence length bound; defaults to the context length.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Also write decoded rasters as PGM/PPM next to each file.
    #[arg(long)]
    pub pnm: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SubsamplingArg {
    #[value(name = "420")]
    S420,
    #[value(name = "444")]
    S444,
}

#[derive(Debug, Subcommand)]
pub enum CodecCommand {
    /// Encode a PGM/PPM raster.
    Encode {
        input: PathBuf,
        #[arg(long = "q", default_value_t = 75)]
        quality: u32,
        #[arg(long, value_enum, default_value_t = SubsamplingArg::S420)]
        subsampling: SubsamplingArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode to PGM/PPM.
    Decode {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print diagnostics; exits 1 when the stream is broken.
    Validate { input: PathBuf },
    /// Print the quality whose tables the stream uses.
    Quality { input: PathBuf },
}
