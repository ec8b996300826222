//! Flag definitions. Every option is optional on the command line so that a
//! config file can supply it; defaults are applied by `resolve`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "otws",
    version,
    about = "Optimal transport with learned Sinkhorn warm starts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact transport cost and dual potentials for measure pairs.
    Solve(SolveArgs),
    /// Sinkhorn runs with a per-checkpoint trace.
    Sinkhorn(SinkhornArgs),
    /// Adversarial training of the generator and approximator.
    Train(TrainArgs),
    /// Iterations-to-accuracy of each initialization over datasets.
    Bench(BenchArgs),
    /// Barycenter of a family of measures by descent on dual potentials.
    Barycenter(BarycenterArgs),
    /// Generate or convert a dataset into raw_grid form.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Ones,
    Net,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainArg {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Kind {
    #[value(name = "random_r3")]
    #[serde(rename = "random_r3")]
    RandomR3,
    #[value(name = "idx_images")]
    #[serde(rename = "idx_images")]
    IdxImages,
    #[value(name = "raw_grid")]
    #[serde(rename = "raw_grid")]
    RawGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Measures `2k` and `2k + 1` form instance `k`.
    Consecutive,
    /// Measure `k` is paired with itself.
    #[value(name = "self")]
    #[serde(rename = "self")]
    Identical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Potential,
    Transport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceArg {
    Exact,
    Net,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRuleArg {
    Bundle,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimplexArg {
    Project,
    Softmax,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SolveArgs {
    /// `random`, or a path to an IDX or raw_grid file.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Grid points per measure (a square) for generated data.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of instances.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_enum)]
    pub pairing: Option<Pairing>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the nonzero plan entries.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub plans: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file (or an earlier manifest.json) supplying any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SinkhornArgs {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_enum)]
    pub pairing: Option<Pairing>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub check_every: Option<usize>,
    #[arg(long)]
    pub stop_mcv: Option<f64>,
    #[arg(long, value_enum)]
    pub domain: Option<DomainArg>,
    #[arg(long, value_enum)]
    pub init: Option<Init>,
    /// Checkpoint used by `--init net`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BenchArgs {
    /// Repeatable; each dataset gets its own summary rows.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dataset: Vec<String>,
    /// Repeatable.
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub init: Vec<Init>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_enum)]
    pub pairing: Option<Pairing>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub check_every: Option<usize>,
    #[arg(long)]
    pub stop_mcv: Option<f64>,
    #[arg(long, value_enum)]
    pub domain: Option<DomainArg>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub minibatch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_approximator: Option<f64>,
    #[arg(long)]
    pub lr_generator: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Total unique generated samples.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Write an intermediate checkpoint every K outer iterations.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BarycenterArgs {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of input measures.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub source: Option<SourceArg>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, value_enum)]
    pub step_rule: Option<StepRuleArg>,
    #[arg(long, value_enum)]
    pub simplex: Option<SimplexArg>,
    /// Also render the result as a PGM image.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pgm: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Source file for `idx_images` and `raw_grid`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Positivity floor added before normalization.
    #[arg(long)]
    pub floor: Option<f64>,
    /// Also render each measure as a PGM image.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pgm: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
