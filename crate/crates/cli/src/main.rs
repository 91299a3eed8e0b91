//! `relight`: seeded experiment harness over relight-core.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "relight", version, about = "Radiosity relighting experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Seed for every random draw; trial i uses stream (seed, i).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Number of campaign trials (bootstrap replicates for `fid`).
    #[arg(long, global = true)]
    pub trials: Option<usize>,

    /// Report file. Without it the report goes to stdout and the summary to stderr.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Override a named tolerance or range, e.g. `--set max_cond=1.1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, f64)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a scene under the mean luminaire mix and write the radiosity field.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Luminaire weights, comma separated; defaults to uniform.
        #[arg(long, value_delimiter = ',')]
        theta: Option<Vec<f64>>,
    },
    /// Single-factor perturbation campaign checked against that factor's bound.
    Perturb {
        /// Fixed base scene; random scenes when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, value_enum)]
        factor: FactorArg,
    },
    /// Combined perturbation campaign checked against the full bound.
    VerifyBounds {
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Fit an effective generator matrix, or with --trials run the regret campaign.
    Egm {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        /// Dirichlet concentration; overrides the scene's value.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Fit a shading field with non-negative generator weights.
    Conefit {
        /// Flat CSV vector holding the raw shading field.
        #[arg(long)]
        target: PathBuf,
        /// CSV matrix with one generator field per row.
        #[arg(long)]
        generators: PathBuf,
        /// Projected-gradient steps; exact active-set solve when absent.
        #[arg(long)]
        ngd: Option<usize>,
    },
    /// FID and extrapolated FID between two embedding sets.
    Fid {
        /// Exactly two embedding files.
        #[arg(long, num_args = 1, required = true)]
        embeddings: Vec<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Rank relit candidates by local FID; candidate row i replaces base point i.
    Lfid {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Eigenvalue floor relative to the largest covariance eigenvalue.
        #[arg(long, default_value_t = relight_core::metrics::DEFAULT_EIG_FLOOR)]
        eig_floor: f64,
    },
    /// Mean-matched root-mean-square difference between images and relights.
    Msd {
        /// CSV matrix, one image per row.
        #[arg(long)]
        originals: PathBuf,
        #[arg(long)]
        relights: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FactorArg {
    Luminaire,
    Albedo,
    Geometry,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Binary,
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|e| format!("bad value for {k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(commands::Outcome::Clean) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Violations) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
