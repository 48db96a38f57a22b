use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "olfalign",
    version,
    about = "Alignment analyses between molecular embeddings and human olfactory perception",
    after_help = "Flags may also come from a JSON file named by OLFALIGN_CONFIG; its keys mirror \
                  flag names and explicit flags take precedence."
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Logistic probes on binary descriptor labels, scored by micro ROC-AUC.
    Classify(ClassifyArgs),
    /// Lasso probes on mean descriptor ratings, scored by CC and NRMSE.
    Regress(RegressArgs),
    /// Correlate model cosine similarities with human pair similarities.
    Rsa(RsaArgs),
    /// Decode physicochemical descriptors from one or more layers.
    Physchem(PhyschemArgs),
    /// Subject-to-mean correlation ceilings from per-subject ratings.
    NoiseCeiling(NoiseCeilingArgs),
    /// Layer sweeps of RSA and, optionally, descriptor decoding.
    Layers(LayersArgs),
    /// Model and human similarity matrices over the odorants of a pairs file.
    Rsm(RsmArgs),
    /// First two principal components of labelled odorants.
    PcaScatter(PcaScatterArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Classify(_) => "classify",
            Command::Regress(_) => "regress",
            Command::Rsa(_) => "rsa",
            Command::Physchem(_) => "physchem",
            Command::NoiseCeiling(_) => "noise-ceiling",
            Command::Layers(_) => "layers",
            Command::Rsm(_) => "rsm",
            Command::PcaScatter(_) => "pca-scatter",
        }
    }
}

/// Embedding tables, paired with manifests by position.
#[derive(Debug, Args)]
pub struct TableArgs {
    /// Embedding CSV (`id,f0..f{D-1}`); repeat for several tables.
    #[arg(long = "embeddings", required = true, value_name = "CSV")]
    pub embeddings: Vec<PathBuf>,
    /// Manifest JSON for the embedding file at the same position.
    #[arg(long = "manifest", required = true, value_name = "JSON")]
    pub manifests: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Base seed for splits and inner folds (required; there is no implicit randomness).
    #[arg(long)]
    pub seed: u64,
    /// Train/test repetitions.
    #[arg(long, default_value_t = 30)]
    pub repetitions: usize,
    /// Held-out fraction per repetition.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Inner cross-validation folds for penalty selection.
    #[arg(long, default_value_t = 5)]
    pub inner_folds: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PcaFitArg {
    Train,
    Global,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// PCA dimension; inputs with at most this many columns skip PCA.
    #[arg(long, default_value_t = 20)]
    pub pca_k: usize,
    /// Disable PCA entirely.
    #[arg(long)]
    pub no_pca: bool,
    /// Disable feature z-scoring.
    #[arg(long)]
    pub no_zscore: bool,
    /// Rows the PCA basis is fit on; `global` leaks test rows and is for sensitivity checks.
    #[arg(long, value_enum, default_value = "train")]
    pub pca_fit: PcaFitArg,
    /// Fail instead of truncating when the data has lower rank than the PCA dimension.
    #[arg(long)]
    pub strict_pca: bool,
    /// Comma-separated penalty grid. Logistic: absolute L2 strengths.
    /// Lasso: multiples of alpha_max unless --grid-absolute.
    #[arg(long, value_delimiter = ',', value_name = "VALUES")]
    pub grid: Option<Vec<f64>>,
    /// Treat lasso grid values as absolute penalties.
    #[arg(long)]
    pub grid_absolute: bool,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Embedding CSV (`id,f0..f{D-1}`).
    #[arg(long = "embeddings", value_name = "CSV", required_unless_present = "predictions")]
    pub embeddings: Option<PathBuf>,
    /// Manifest JSON (`model_name`, `layer`, `dim`).
    #[arg(long = "manifest", value_name = "JSON", required_unless_present = "predictions")]
    pub manifest: Option<PathBuf>,
    /// Binary label CSV (`odorant,<descriptors>`).
    #[arg(long, value_name = "CSV")]
    pub labels: PathBuf,
    /// Score external predictions (`row_id,descriptor,score`) instead of fitting probes.
    #[arg(long, value_name = "CSV", conflicts_with_all = ["embeddings", "manifest"])]
    pub predictions: Option<PathBuf>,
    /// Model name reported for external predictions.
    #[arg(long, default_value = "external", requires = "predictions")]
    pub model_name: String,
    /// Stratify inner folds by class.
    #[arg(long)]
    pub stratified: bool,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    /// Embedding CSV (`id,f0..f{D-1}`).
    #[arg(long = "embeddings", value_name = "CSV")]
    pub embeddings: PathBuf,
    /// Manifest JSON (`model_name`, `layer`, `dim`).
    #[arg(long = "manifest", value_name = "JSON")]
    pub manifest: PathBuf,
    /// Mean ratings CSV; its range sidecar is the same path with a `.json` extension.
    #[arg(long, value_name = "CSV")]
    pub ratings: PathBuf,
    /// Z-score each target on training rows (predictions are mapped back).
    #[arg(long)]
    pub zscore_targets: bool,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct RsaArgs {
    #[command(flatten)]
    pub tables: TableArgs,
    /// Pairs CSV (`odorant_a,odorant_b,score`) with a polarity/range sidecar; repeatable.
    #[arg(long, required = true, value_name = "CSV")]
    pub pairs: Vec<PathBuf>,
    /// Use 1 - angle/pi instead of cosine similarity.
    #[arg(long)]
    pub angle: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct PhyschemArgs {
    #[command(flatten)]
    pub tables: TableArgs,
    /// Descriptor CSV (`id,<15 descriptors>`).
    #[arg(long, value_name = "CSV")]
    pub descriptors: PathBuf,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct NoiseCeilingArgs {
    /// Per-subject ratings CSV (`subject,odorant,<descriptors>`).
    #[arg(long, value_name = "CSV")]
    pub ratings: PathBuf,
    /// Correlate each subject with the mean of the other subjects.
    #[arg(long)]
    pub loo: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct LayersArgs {
    #[command(flatten)]
    pub tables: TableArgs,
    /// Pairs CSVs for the RSA sweep.
    #[arg(long, value_name = "CSV")]
    pub pairs: Vec<PathBuf>,
    /// Descriptor CSV for the decoding sweep (needs --seed).
    #[arg(long, value_name = "CSV")]
    pub descriptors: Option<PathBuf>,
    /// Use 1 - angle/pi instead of cosine similarity.
    #[arg(long)]
    pub angle: bool,
    /// Base seed for the decoding sweep.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train/test repetitions.
    #[arg(long, default_value_t = 30)]
    pub repetitions: usize,
    /// Held-out fraction per repetition.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Inner cross-validation folds for penalty selection.
    #[arg(long, default_value_t = 5)]
    pub inner_folds: usize,
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct RsmArgs {
    /// Embedding CSV (`id,f0..f{D-1}`).
    #[arg(long = "embeddings", value_name = "CSV")]
    pub embeddings: PathBuf,
    /// Manifest JSON (`model_name`, `layer`, `dim`).
    #[arg(long = "manifest", value_name = "JSON")]
    pub manifest: PathBuf,
    /// Pairs CSV whose odorants index the matrices.
    #[arg(long, value_name = "CSV")]
    pub pairs: PathBuf,
    /// Use 1 - angle/pi instead of cosine similarity.
    #[arg(long)]
    pub angle: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct PcaScatterArgs {
    /// Embedding CSV (`id,f0..f{D-1}`).
    #[arg(long = "embeddings", value_name = "CSV")]
    pub embeddings: PathBuf,
    /// Manifest JSON (`model_name`, `layer`, `dim`).
    #[arg(long = "manifest", value_name = "JSON")]
    pub manifest: PathBuf,
    /// Binary label CSV (`odorant,<descriptors>`).
    #[arg(long, value_name = "CSV")]
    pub labels: PathBuf,
    /// Broad categories shaded in the scatter.
    #[arg(long, value_delimiter = ',', default_value = "floral,meaty,ethereal")]
    pub broad: Vec<String>,
    /// Narrow categories outlined in the scatter.
    #[arg(long, value_delimiter = ',')]
    pub narrow: Vec<String>,
    #[command(flatten)]
    pub out: OutArgs,
}
