//! `hidemk` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "hidemk", version, about = "Knockoff-controlled variable selection with hierarchical networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file (fields not given take their defaults).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: HIDEMK_THREADS, else all cores).
    #[arg(long, global = true, env = "HIDEMK_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

/// Genotype / knockoff / trait inputs.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub genotypes: PathBuf,
    /// Variant metadata CSV (positions).
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    #[arg(long)]
    pub knockoffs: PathBuf,
    #[arg(long = "trait")]
    pub trait_file: PathBuf,
    /// quantitative | dichotomous
    #[arg(long, default_value = "quantitative")]
    pub trait_kind: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate genotypes and one trait.
    Simulate {
        #[arg(long = "trait", default_value = "quantitative")]
        trait_kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Generate SCIT knockoffs for a genotype CSV.
    Knockoff {
        #[arg(long)]
        genotypes: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        m: usize,
        #[arg(long, default_value_t = 10)]
        window: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train one network and save a checkpoint plus its history.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "hidemk")]
        method: String,
        #[command(flatten)]
        common: Common,
    },
    /// Importance matrix from a checkpoint, or from a freshly trained ensemble.
    Importance {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint to differentiate; without it an ensemble is trained.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "hidemk-derand")]
        method: String,
        /// Ensemble size (overrides the config).
        #[arg(long)]
        ensemble: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Knockoff filter on an importance CSV.
    Select {
        #[arg(long)]
        importance: PathBuf,
        /// Use only the first M knockoff columns.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2])]
        alpha: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Marginal / lasso / ridge with a single knockoff.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_values_t = ["lasso".to_string()])]
        method: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2])]
        alpha: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Full simulation study: reports and FDR/power curves.
    Pipeline {
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long = "trait")]
        trait_kind: Option<String>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Append to an existing reports.jsonl instead of replacing it.
        #[arg(long)]
        append: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Parameter and activation counts for 0/1/2-level hierarchies.
    Counts {
        #[arg(long, default_value_t = 1000)]
        p: usize,
        #[arg(long, default_value_t = 5)]
        m: usize,
        #[arg(long, default_value_t = 5)]
        sigma: usize,
        #[arg(long, default_value_t = 8)]
        theta: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Pipeline curves over a grid of region kernel sizes.
    SweepKernel {
        #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 25, 50])]
        sigmas: Vec<usize>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long = "trait")]
        trait_kind: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute curves.csv from per-replicate reports.
    Aggregate {
        #[arg(long, required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn error_record(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", error_record("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
