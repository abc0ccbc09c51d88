use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Sparse dictionary learning on language-model activations.
///
/// Every subcommand reads its parameters from flags, from a section of the
/// `--config` TOML file, or from built-in defaults, in that order of
/// precedence. Each run writes `manifest.json` into its output directory.
#[derive(Debug, Parser)]
#[command(name = "dictlearn", version, propagate_version = true)]
pub struct Cli {
    /// TOML run configuration; flags given on the command line override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Global seed for every randomised step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for data-parallel loops (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic superposition dataset with known features.
    Synth(SynthArgs),
    /// Train a sparse autoencoder dictionary.
    Train(TrainArgs),
    /// Reconstruction quality and sparsity of a dictionary or direction set.
    Eval(EvalArgs),
    /// Fit a PCA, ICA, random or neuron-basis direction set.
    Baseline(BaselineArgs),
    /// Per-token activation histogram of one feature.
    Histogram(HistogramArgs),
    /// Tokens a feature promotes, and the logit change when it is ablated.
    LogitEffect(LogitEffectArgs),
    /// Explain features and score the explanations by simulation.
    Interp(InterpArgs),
    /// Order features by how much patching them closes a logit gap.
    Patch(PatchArgs),
    /// Build a causal tree of upstream features by ablation.
    Tree(TreeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of ground-truth features.
    #[arg(long, default_value_t = 512)]
    pub n_gt: usize,
    /// Activation dimension.
    #[arg(long, default_value_t = 256)]
    pub d: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_samples: usize,
    /// Expected number of active features per sample.
    #[arg(long, default_value_t = 5.0)]
    pub avg_active: f64,
    /// Mean of the exponential coefficient magnitudes.
    #[arg(long, default_value_t = 1.0)]
    pub coeff_scale: f64,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// α = 8.6e-4
    Residual,
    /// α = 3.2e-4
    Mlp,
}

impl Preset {
    pub fn alpha(self) -> f64 {
        match self {
            Preset::Residual => 8.6e-4,
            Preset::Mlp => 3.2e-4,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training activations (.sact).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// L1 coefficient.
    #[arg(long, default_value_t = 1e-3, conflicts_with = "preset")]
    pub alpha: f64,
    /// Named L1 coefficient.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Dictionary size ratio; d_hid = round(ratio · d_in).
    #[arg(long, default_value_t = 1.0)]
    pub ratio: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1)]
    pub epochs: u32,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    /// Separate encoder and decoder matrices.
    #[arg(long)]
    pub untied: bool,
    /// Re-draw dead features at epoch boundaries.
    #[arg(long)]
    pub dead_reinit: bool,
    /// Features firing fewer times than this per 10M samples count as dead.
    #[arg(long, default_value_t = 10)]
    pub dead_threshold: u64,
    /// Ground-truth dictionary (.sdic) to score recovery against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Held-out activations (.sact) to evaluate the trained dictionary on.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dictionary or direction set (.sdic).
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Activations (.sact).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use plain linear projection codes for a direction set.
    #[arg(long)]
    pub linear: bool,
    /// Keep only the K largest codes of a direction set.
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub dead_threshold: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Pca,
    Ica,
    Random,
    Neuron,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum, default_value_t = BaselineKind::Pca)]
    pub kind: BaselineKind,
    /// Activations (.sact).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of directions (defaults to d_in).
    #[arg(long)]
    pub k: Option<usize>,
    /// Evaluate with only the K largest codes kept.
    #[arg(long)]
    pub topk: Option<usize>,
    /// Rows sampled for ICA.
    #[arg(long, default_value_t = 200_000)]
    pub ica_subsample: usize,
    #[arg(long, default_value_t = 200)]
    pub ica_max_iter: usize,
    #[arg(long, default_value_t = 10)]
    pub dead_threshold: u64,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Token stream aligned with the activations (JSON lines).
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub feature: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct LogitEffectArgs {
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Unembedding matrix (.sact, one row per token id).
    #[arg(long)]
    pub unembed: Option<PathBuf>,
    /// Vocabulary (JSON lines).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub feature: Option<usize>,
    /// Tokens listed per ranking.
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpMode {
    TopRandom,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockChoice {
    Perfect,
    Constant,
    Noisy,
}

/// Without `--mock`, the simulator endpoint comes from AUTOINTERP_ENDPOINT,
/// AUTOINTERP_MODEL and AUTOINTERP_API_KEY.
#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Token stream aligned with the activations (JSON lines).
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Features to interpret, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub feature: Vec<usize>,
    #[arg(long, value_enum, default_value_t = InterpMode::TopRandom)]
    pub mode: InterpMode,
    /// Use an offline simulator instead of the HTTP endpoint.
    #[arg(long, value_enum)]
    pub mock: Option<MockChoice>,
    /// Directory holding explain.txt and simulate.txt templates.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Lines scanned for fragments.
    #[arg(long, default_value_t = 50_000)]
    pub max_lines: usize,
    /// Features in flight at once.
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderMode {
    Independent,
    Greedy,
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Case manifest (JSON) listing base/target .sact pairs.
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// Unembedding matrix (.sact) of the linear read-out oracle.
    #[arg(long)]
    pub unembed: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Candidate features, comma separated (defaults to all).
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<usize>,
    #[arg(long, value_enum, default_value_t = OrderMode::Independent)]
    pub mode: OrderMode,
    /// Features to order (defaults to every candidate).
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    /// Per-layer dictionaries (.sdic), comma separated, lowest layer first.
    #[arg(long, value_delimiter = ',')]
    pub dicts: Vec<PathBuf>,
    /// Per-layer aligned activations (.sact), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    /// Per-transition linear maps (.sact, d_out × d_in); identity when absent.
    #[arg(long, value_delimiter = ',')]
    pub transitions: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Layer of the root feature.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Root feature index.
    #[arg(long)]
    pub feature: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 3)]
    pub fanout: usize,
}
