use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sparfa", version, about = "Sparse factor analysis of graded learner responses")]
pub struct Cli {
    /// Worker threads for the numerical kernels (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Record wall-clock time in the run manifest (breaks byte-identical reruns).
    #[arg(long, global = true)]
    pub timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known factors.
    Simulate(SimulateArgs),
    /// Estimate a factor model from a response CSV.
    Fit(FitArgs),
    /// Draw the question–concept graph of a model as DOT.
    Graph(GraphArgs),
    /// Score a model against ground truth, held-out responses and tags.
    Eval(EvalArgs),
    /// Run a Monte-Carlo benchmark protocol.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    SparfaM,
    SparfaB,
    Ksvd,
}

impl FitMethod {
    pub fn label(self) -> &'static str {
        match self {
            FitMethod::SparfaM => "sparfa-m",
            FitMethod::SparfaB => "sparfa-b",
            FitMethod::Ksvd => "ksvd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolKind {
    Size,
    Missingness,
    Sparsity,
    Mismatch,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Key-value file: q, n, k, nnz, lambda_k, v_mu, v0_diag, h, p_obs, link, seed, holdout.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: FitMethod,
    /// Response CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of concepts.
    #[arg(long)]
    pub k: usize,
    /// Output model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Key-value file with solver options; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// probit or logit (SPARFA-M only).
    #[arg(long)]
    pub link: Option<String>,
    /// Fixed ℓ₁ weight.
    #[arg(long, conflicts_with = "lambda_grid")]
    pub lambda: Option<f64>,
    /// Comma-separated λ values selected by BIC.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// SPARFA-B burn-in sweeps.
    #[arg(long)]
    pub burnin: Option<usize>,
    /// SPARFA-B retained sweeps.
    #[arg(long)]
    pub samples: Option<usize>,
    /// SPARFA-B chain start: `prior` (default) or `sparfa-m` (a BIC-selected
    /// SPARFA-M fit on the same data).
    #[arg(long)]
    pub init: Option<String>,
    /// SPARFA-B activity threshold for the point estimate.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// K-SVD+ nonzeros per row of W.
    #[arg(long, conflicts_with = "truth")]
    pub sparsity: Option<usize>,
    /// K-SVD+ oracle row sparsity from a ground-truth model.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output DOT file.
    #[arg(long)]
    pub out: PathBuf,
    /// Tag CSV used to label concepts with their top tags.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// Fixed BPDN weight; selected per concept when omitted.
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth model for E_W, E_C, E_mu and E_H.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Responses the model was trained on.
    #[arg(long, requires = "heldout")]
    pub train: Option<PathBuf>,
    /// Held-out responses, disjoint from the training set.
    #[arg(long, requires = "train")]
    pub heldout: Option<PathBuf>,
    /// Tag CSV for concept–tag and learner tag-knowledge reports.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub protocol: ProtocolKind,
    /// Output CSV with columns trial, method, metric, value.
    #[arg(long)]
    pub out: PathBuf,
    /// Key-value file: trials, seed, q, n, k, methods, lambda_grid, gamma,
    /// restarts, burnin, samples, threshold, p_obs, rates, q_values, n_values,
    /// k_values, coupled.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}
