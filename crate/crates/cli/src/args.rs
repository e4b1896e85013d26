use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "stiv", version, about = "Self-tuning instrumental variables estimation")]
pub struct Cli {
    /// Write the JSON document here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sensitivity enumeration and Monte Carlo.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Dimensions, scalings and the exogenous mapping of a dataset.
    Inspect(InspectArgs),
    /// Fit STIV, its non-pivotal variant or the two-stage variant.
    Estimate(EstimateArgs),
    /// Sensitivity lower bounds for a dataset or a given matrix.
    Sensitivity(SensitivityArgs),
    /// Simultaneous confidence intervals.
    Ci(CiArgs),
    /// Thresholded variable selection.
    Select(CiArgs),
    /// Non-validity indicators of suspect instruments.
    Nv(NvArgs),
    /// Monte-Carlo study of a preset design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationArg {
    MaxAbs,
    Rms,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaWeightArg {
    Unit,
    SampleSize,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// CSV file with columns y, x1..xK, z1..zL and optionally zbar1..zbarL1.
    pub data: PathBuf,
    /// Endogenous regressors: 1-based comma list, `none` or `all`.
    #[arg(long)]
    pub endogenous: Option<String>,
    #[arg(long, value_enum, default_value = "max-abs")]
    pub normalization: NormalizationArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateModeArg {
    Practical,
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct RateArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long = "r-mode", value_enum, default_value = "practical")]
    pub rate_mode: RateModeArg,
    /// Deviation constant `A >= 1` (full mode).
    #[arg(long = "a", default_value_t = 1.0)]
    pub a: f64,
    /// Moment order in (0, 1] (full mode).
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Self-normalization constant (full mode).
    #[arg(long = "d-n-delta")]
    pub d_n_delta: Option<f64>,
    /// Moderate-deviation constant (full mode).
    #[arg(long = "a0")]
    pub a0: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Stiv,
    Nonpivotal,
    TwoStage,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value = "stiv")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0.1)]
    pub c: f64,
    /// Known noise level for the non-pivotal variant.
    #[arg(long = "sigma-star")]
    pub sigma_star: Option<f64>,
    #[arg(long = "sigma-weight", value_enum, default_value = "sample-size")]
    pub sigma_weight: SigmaWeightArg,
    /// Square-root Lasso penalty constant (two-stage).
    #[arg(long = "c-sql", default_value_t = 1.1)]
    pub c_sql: f64,
    /// Recorded in the manifest; the estimators themselves are deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub rate: RateArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct InspectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Direct,
    Certificate,
    Coherence,
}

#[derive(Debug, Args, Serialize)]
pub struct SensitivityArgs {
    /// Dataset; omit when `--psi` is given.
    pub data: Option<PathBuf>,
    /// Headerless CSV holding the normalized matrix directly.
    #[arg(long, conflicts_with = "data")]
    pub psi: Option<PathBuf>,
    /// Defaults to `all`; only matters for which columns must match instruments.
    #[arg(long)]
    pub endogenous: Option<String>,
    #[arg(long, value_enum, default_value = "max-abs")]
    pub normalization: NormalizationArg,
    #[arg(long, value_enum, default_value = "direct")]
    pub method: MethodArg,
    /// Coordinate (1-based).
    #[arg(long)]
    pub k: Option<usize>,
    /// Support set, 1-based comma list.
    #[arg(long = "J")]
    pub j: Option<String>,
    /// Block, 1-based comma list.
    #[arg(long = "J0")]
    pub j0: Option<String>,
    /// Sparsity certificate.
    #[arg(long)]
    pub s: Option<usize>,
    /// Norm index in [1, inf]; `inf` accepted.
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    pub c: f64,
    #[arg(long)]
    pub enlarged: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlackArg {
    Standard,
    SingleEndoRemark,
}

#[derive(Debug, Args, Serialize)]
pub struct CiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Sparsity certificate; takes precedence over `--Jhat`.
    #[arg(long)]
    pub s: Option<usize>,
    /// Support estimate: `auto` (nonzero coefficients of the fit) or a 1-based list.
    #[arg(long = "Jhat", default_value = "auto")]
    pub jhat: String,
    #[arg(long = "slack", value_enum, default_value = "standard")]
    pub slack: SlackArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PilotArg {
    Stiv,
    File,
}

#[derive(Debug, Args, Serialize)]
pub struct NvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha1: f64,
    /// Sparsity bound on the non-valid set: `auto` or an integer.
    #[arg(long, default_value = "auto")]
    pub s1: String,
    #[arg(long, value_enum, default_value = "stiv")]
    pub pilot: PilotArg,
    /// JSON file `{"beta": [...], "b_hat": x}` for `--pilot file`.
    #[arg(long = "pilot-file")]
    pub pilot_file: Option<PathBuf>,
    /// Sparsity certificate for the STIV pilot budget.
    #[arg(long, default_value_t = 5)]
    pub s: usize,
    /// Pilot fit settings; `--c` and `--sigma-weight` also apply to the non-validity program.
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetArg {
    Table3,
    Table4,
    Table5,
    Table7,
    NvPlanted,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: PresetArg,
    /// Defaults to the preset's replication count.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "max-abs")]
    pub normalization: NormalizationArg,
    /// Include every replication in the JSON output.
    #[arg(long = "keep-replications")]
    pub keep_replications: bool,
}
