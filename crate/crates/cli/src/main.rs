//! `simsamp` — pick representative simulation regions by stratified and
//! two-phase sampling, and quantify the error of the resulting estimates.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser)]
#[command(
    name = "simsamp",
    version,
    about = "Region sampling and planning toolkit for simulation studies",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    /// k-means on random-projected basic-block vectors
    Bbv,
    /// k-means on standardized rich feature vectors
    Rfv,
    /// CPI boundaries equalizing weight-times-sd per stratum
    Dg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Random,
    Centroid,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Srs,
    Stratified,
    Collapsed,
    TwoPhase,
    TwoPhaseP2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PairByArg {
    /// Order strata by their mean baseline CPI (needs --regions)
    Mean,
    /// Order strata by the sampled unit's value
    Sampled,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a region CSV: histogram, mean, variance, SRS margin
    Characterize {
        regions: PathBuf,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        bins: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build strata from BBVs, RFVs, or CPI boundaries
    Stratify {
        regions: PathBuf,
        #[arg(long, value_enum)]
        scheme: SchemeArg,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// BBV triplet CSV (required for --scheme bbv)
        #[arg(long)]
        bbv: Option<PathBuf>,
        /// Random-projection output dimension for the BBV scheme
        #[arg(long, default_value_t = 15)]
        dims: usize,
        /// Include CPI itself as an RFV column
        #[arg(long, default_value_t = true)]
        include_cpi: bool,
        /// Target relative spread of weight-times-sd products (dg scheme)
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick one region per stratum
    Select {
        #[arg(long)]
        stratification: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long, value_enum)]
        policy: PolicyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// BBV triplet CSV (required for centroid policy on a BBV stratification)
        #[arg(long)]
        bbv: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a mean with a confidence interval from sampled values
    Estimate {
        /// CSV holding region_id plus the study variable
        #[arg(long)]
        values: PathBuf,
        #[arg(long, default_value = "cpi")]
        value_column: String,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Stratified-sample CSV (stratum_id,region_id) for multi-unit methods
        #[arg(long)]
        sample: Option<PathBuf>,
        /// Selection CSV (one region per stratum) for the collapsed method
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        stratification: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        phase1_n: Option<usize>,
        #[arg(long)]
        phase1_s2: Option<f64>,
        /// How strata are ordered before pairing (collapsed method)
        #[arg(long, value_enum, default_value_t = PairByArg::Mean)]
        pair_by: PairByArg,
        /// Baseline region CSV (for --pair-by mean)
        #[arg(long)]
        regions: Option<PathBuf>,
        /// Also report margins under both z and t critical values
        #[arg(long, default_value_t = false)]
        both_criticals: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Size the periodic multi-unit validation sample
    Plan {
        #[arg(long)]
        stratification: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long, default_value_t = 1.5)]
        growth: f64,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo coverage experiment for a sampling design
    Validate {
        /// Synthetic population spec (JSON)
        #[arg(long, conflicts_with = "regions")]
        spec: Option<PathBuf>,
        /// Real population CSV
        #[arg(long)]
        regions: Option<PathBuf>,
        /// Design: "srs:N", "stratified:SCHEME:K:NH", or "one-unit:SCHEME:K"
        #[arg(long)]
        design: String,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads for the trial loop (0 = rayon default)
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// BBV triplet CSV (for BBV designs on a real population)
        #[arg(long)]
        bbv: Option<PathBuf>,
        #[arg(long, default_value_t = 15)]
        dims: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the full CPI distribution against a selection's approximation
    Report {
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        stratification: PathBuf,
        #[arg(long)]
        selection: PathBuf,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        bins: u64,
        #[arg(long, default_value_t = 3)]
        min_count: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Characterize { regions, bins, out } => {
            commands::characterize(&regions, bins as usize, &out)
        }
        Command::Stratify {
            regions,
            scheme,
            k,
            seed,
            bbv,
            dims,
            include_cpi,
            tol,
            max_iter,
            out,
        } => commands::stratify(
            &regions,
            scheme,
            k,
            seed,
            bbv.as_deref(),
            dims,
            include_cpi,
            tol,
            max_iter,
            &out,
        ),
        Command::Select {
            stratification,
            regions,
            policy,
            seed,
            bbv,
            out,
        } => commands::select(&stratification, &regions, policy, seed, bbv.as_deref(), &out),
        Command::Estimate {
            values,
            value_column,
            method,
            sample,
            selection,
            stratification,
            level,
            phase1_n,
            phase1_s2,
            pair_by,
            regions,
            both_criticals,
            out,
        } => commands::estimate(commands::EstimateArgs {
            values: &values,
            value_column: &value_column,
            method,
            sample: sample.as_deref(),
            selection: selection.as_deref(),
            stratification: stratification.as_deref(),
            level,
            phase1_n,
            phase1_s2,
            pair_by,
            regions: regions.as_deref(),
            both_criticals,
            out: &out,
        }),
        Command::Plan {
            stratification,
            regions,
            growth,
            level,
            out,
        } => commands::plan(&stratification, &regions, growth, level, &out),
        Command::Validate {
            spec,
            regions,
            design,
            trials,
            level,
            seed,
            threads,
            bbv,
            dims,
            out,
        } => commands::validate(commands::ValidateArgs {
            spec: spec.as_deref(),
            regions: regions.as_deref(),
            design: &design,
            trials,
            level,
            seed,
            threads,
            bbv: bbv.as_deref(),
            dims,
            out: &out,
        }),
        Command::Report {
            regions,
            stratification,
            selection,
            bins,
            min_count,
            out,
        } => commands::report(
            &regions,
            &stratification,
            &selection,
            bins as usize,
            min_count,
            &out,
        ),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
