mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpkit::applier::Orientation;
use dpkit::subset::{Method, Similarity};
use dpkit::{Error, Role};

/// Tool version followed by the on-disk format version.
const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (file format 1)");

#[derive(Parser, Debug)]
#[command(name = "dpkit", version = VERSION, about = "Labeling functions, label models and subset selection")]
struct Cli {
    /// Pipeline config file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a rule file over a dataset and write the vote/score matrix.
    Apply {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = OrientationArg::Instances)]
        orientation: OrientationArg,
        /// Role of the dataset; L, V and T require gold on every row.
        #[arg(long, value_enum, default_value_t = RoleArg::U)]
        role: RoleArg,
    },
    /// Print per-LF coverage, overlap, conflict and accuracy.
    Analyze {
        #[arg(long)]
        matrix: PathBuf,
        /// Dataset whose gold labels replace any stored in the matrix.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a label model.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Write per-instance probabilities and labels from saved parameters.
    Predict {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Rules to apply to `--data` when no matrix is given.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose instances to label.
    Subset(SubsetArgs),
    /// Generate the synthetic SMS corpus and run the whole pipeline on it.
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum TrainCommand {
    /// Generative label model on an unlabeled matrix.
    Cage {
        /// Unlabeled matrix to fit.
        #[arg(long)]
        matrix: PathBuf,
        /// Labeled matrix; its gold sets the quality guides.
        #[arg(long)]
        labeled: Option<PathBuf>,
        /// Gold-bearing matrix scored after every epoch.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        params_out: PathBuf,
        /// Defaults to the params path with a `.log.json` extension.
        #[arg(long)]
        log_out: Option<PathBuf>,
        #[command(flatten)]
        opt: OptimizerArgs,
    },
    /// Joint feature model and label model.
    Jl {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        unlabeled: PathBuf,
        /// Gold-bearing split used to pick the best epoch.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        params_out: PathBuf,
        #[arg(long)]
        log_out: Option<PathBuf>,
        /// Supervised feature model on L alone.
        #[arg(long)]
        only_l: bool,
        #[command(flatten)]
        opt: OptimizerArgs,
    },
}

#[derive(Args, Debug)]
struct OptimizerArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct SubsetArgs {
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    k: Option<usize>,
    /// Dataset providing features (fl, sup, rand) and gold (sup).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Matrix for maxcover.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, value_enum)]
    similarity: Option<SimilarityArg>,
    /// RBF width.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write `<prefix>.L` and `<prefix>.U` partitioning `--data`.
    #[arg(long)]
    save_prefix: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OrientationArg {
    Instances,
    Lfs,
}

impl From<OrientationArg> for Orientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::Instances => Orientation::Instances,
            OrientationArg::Lfs => Orientation::Lfs,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RoleArg {
    L,
    U,
    V,
    T,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::L => Role::L,
            RoleArg::U => Role::U,
            RoleArg::V => Role::V,
            RoleArg::T => Role::T,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Rand,
    Fl,
    Maxcover,
    Sup,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rand => Method::Rand,
            MethodArg::Fl => Method::Fl,
            MethodArg::Maxcover => Method::Maxcover,
            MethodArg::Sup => Method::Sup,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SimilarityArg {
    Cosine,
    Dot,
    Rbf,
}

fn similarity(arg: Option<SimilarityArg>, sigma: Option<f64>, default: Similarity) -> Similarity {
    match (arg, sigma) {
        (Some(SimilarityArg::Cosine), _) => Similarity::Cosine,
        (Some(SimilarityArg::Dot), _) => Similarity::Dot,
        (Some(SimilarityArg::Rbf), s) => Similarity::Rbf { sigma: s.unwrap_or(1.0) },
        (None, Some(s)) if matches!(default, Similarity::Rbf { .. }) => Similarity::Rbf { sigma: s },
        (None, _) => default,
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io { .. } => 2,
        Error::Data(_) => 3,
        Error::Divergence(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
