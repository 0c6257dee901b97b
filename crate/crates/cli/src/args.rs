use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rip_core::estimator::Dof;
use rip_core::pipeline::Method;
use rip_core::policy::{Backend, HallucinationMode, TaskShape};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "rip", version, about = "Robust aggregation of instant-policy trajectories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query the policy Q times and aggregate the answers into one trajectory.
    Aggregate(AggregateArgs),
    /// Success rate and RMSE over a grid of query counts and degrees of freedom.
    Sweep(SweepArgs),
    /// Success rate against the number of prompt demonstrations (remote backend).
    DemoSweep(DemoSweepArgs),
    /// Uniform against gripper-aware downsampling of high-rate pick demonstrations.
    DownsampleBench(DownsampleBenchArgs),
    /// Finite-difference check of the training gradient.
    Gradcheck(GradcheckArgs),
    /// Downsample a trajectory or the demonstrations of a context file.
    Preprocess(PreprocessArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Thinning {
    None,
    Uniform,
    #[value(name = "g-based")]
    GBased,
}

/// Synthetic oracle settings.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    /// Per-coordinate noise of the synthetic oracle, meters.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Hallucination probability per query.
    #[arg(long = "p-h")]
    pub p_h: Option<f64>,
    /// Hallucination displacement, meters.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Hallucination shape: offset or random-walk.
    #[arg(long)]
    pub mode: Option<HallucinationMode>,
    /// Sample lengths vary by up to this many steps.
    #[arg(long)]
    pub jitter: Option<usize>,
    /// Queries forced to hallucinate.
    #[arg(long)]
    pub planted: Option<usize>,
}

/// Estimator training settings other than ν.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Base learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minibatch size in (query, step) pairs.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Hidden layer sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Sinusoidal time-feature harmonics.
    #[arg(long)]
    pub harmonics: Option<usize>,
}

/// Remote endpoint settings.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RemoteArgs {
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Request timeout, seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Extra attempts per query after a failure.
    #[arg(long)]
    pub retries: Option<u32>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Prompt preamble file.
    #[arg(long)]
    pub preamble: Option<PathBuf>,
    /// Append every request and response to this JSONL file.
    #[arg(long)]
    pub log_queries: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AggregateArgs {
    /// JSON file with any of these options; flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// rip, rip_gauss or single.
    #[arg(long)]
    pub method: Option<Method>,
    /// synthetic or remote.
    #[arg(long)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of policy queries.
    #[arg(long)]
    pub q: Option<usize>,
    /// Degrees of freedom (a positive number or inf).
    #[arg(long)]
    pub nu: Option<Dof>,
    /// Context JSON; without it a synthetic task is generated from the seed.
    #[arg(long)]
    pub context: Option<PathBuf>,
    /// Shape of the generated task: reach, push or pick.
    #[arg(long)]
    pub shape: Option<TaskShape>,
    /// Demonstrations in the generated task.
    #[arg(long)]
    pub demos: Option<usize>,
    /// Thin the demonstrations before querying.
    #[arg(long, value_enum)]
    pub downsample: Option<Thinning>,
    #[arg(long)]
    pub target_len: Option<usize>,
    /// Output trajectory JSON (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub remote: RemoteArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Query counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub qs: Option<Vec<usize>>,
    /// Degrees of freedom, comma separated (inf allowed).
    #[arg(long, value_delimiter = ',')]
    pub nus: Option<Vec<Dof>>,
    /// Trials per cell.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Task shapes cycled over the trials, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub shapes: Option<Vec<TaskShape>>,
    /// CSV output, appended to when it exists (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-figure data files.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DemoSweepArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Demonstration counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub demos: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub shapes: Option<Vec<TaskShape>>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub nu: Option<Dof>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub remote: RemoteArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DownsampleBenchArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Number of seeded tasks.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// pick (default) or reach.
    #[arg(long)]
    pub shape: Option<TaskShape>,
    #[arg(long)]
    pub target_len: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub nu: Option<Dof>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Number of random configurations.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Check only this ν; by default 1.25, 1.5, 3 and inf take turns.
    #[arg(long)]
    pub nu: Option<Dof>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trajectory or context JSON.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub target_len: Option<usize>,
    /// g-based (default) or uniform.
    #[arg(long, value_enum)]
    pub downsample: Option<Thinning>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
