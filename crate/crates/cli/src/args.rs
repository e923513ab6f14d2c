use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "latentdag", version, about = "Gaussian DAG learning with residual-based latent confounder reconstruction")]
pub struct Cli {
    /// Worker threads for bootstrap and permutation work. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic data set with known ground truth.
    Simulate(SimulateArgs),
    /// Learn a bootstrap consensus graph.
    Learn(LearnArgs),
    /// Learn a graph while reconstructing latent confounders from residuals.
    Deconfound(DeconfoundArgs),
    /// Recompute metrics from a finished deconfound run.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Two latents confounding two drivers of an outcome `Z`.
    Benchmark,
    /// Random DAG with latent sources and no outcome.
    Random,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of samples.
    #[arg(long, short = 'n', default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = Design::Benchmark)]
    pub design: Design,
    /// Children of each latent (besides the drivers and outcome for the benchmark).
    #[arg(long)]
    pub children: Option<usize>,
    /// Benchmark: noise sd of the latents' extra children.
    #[arg(long, default_value_t = 1.0)]
    pub child_noise: f64,
    /// Random design: observed node count.
    #[arg(long, default_value_t = 30)]
    pub observed: usize,
    /// Random design: latent count.
    #[arg(long, default_value_t = 2)]
    pub latents: usize,
    /// Random design: probability of each forward edge among observed nodes.
    #[arg(long, default_value_t = 0.1)]
    pub density: f64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Headered numeric CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Column roles and kinds (JSON); a `truth.json` also works.
    #[arg(long)]
    pub roles: Option<PathBuf>,
    /// Forbidden and required edges and forced sources (JSON).
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 50)]
    pub boot: usize,
    /// Minimum edge frequency (either orientation) for the consensus.
    #[arg(long, default_value_t = 0.4)]
    pub threshold: f64,
    #[arg(long, default_value_t = 8)]
    pub max_in_degree: usize,
    /// Ground truth, used to color true-driver edges and for metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Residuals {
    /// Bootstrap-averaged coefficients of the consensus.
    Averaged,
    /// Least-squares refit of the consensus on the full table.
    Refit,
}

#[derive(Debug, Args)]
pub struct DeconfoundArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 20)]
    pub max_iter: usize,
    /// Required BIC improvement per iteration; 0 runs all iterations.
    /// Defaults to 1e-6 times the baseline BIC.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Permutations for parallel analysis.
    #[arg(long, default_value_t = 50)]
    pub n_perm: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub latents_as_sources: bool,
    /// Probability-scale residuals for continuous columns.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub psr: bool,
    #[arg(long, value_enum, default_value_t = Residuals::Averaged)]
    pub residuals: Residuals,
    /// Include outcome residuals in the PCA.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub include_outcomes: bool,
    /// Complete simulated table with the true latents; defaults to
    /// `full.csv` next to the truth file when present.
    #[arg(long)]
    pub full: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of a deconfound run.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub full: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
