//! `lrcontour`: spherical contour descriptors from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod manifest;

use lowrank_contour::basis::Method;
use lowrank_contour::codec::AxisConvention;
use lowrank_contour::experiments::CenterKind;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<lowrank_contour::Error> for CliError {
    fn from(e: lowrank_contour::Error) -> Self {
        match e {
            lowrank_contour::Error::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "lrcontour", version, about = "Spherical low-rank contour descriptors for 3D voxel masks")]
pub struct Cli {
    /// Worker threads for all parallel stages (default: all cores).
    #[arg(long, global = true, env = "SLORD_THREADS")]
    pub threads: Option<usize>,

    /// JSON configuration file; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override configuration values.
#[derive(Args, Debug, Clone, Default)]
pub struct GridArgs {
    /// Angular sampling interval in degrees (must divide 180).
    #[arg(long = "s")]
    pub s_deg: Option<u32>,
    /// Polar axis convention.
    #[arg(long, value_enum)]
    pub axis: Option<AxisArg>,
    /// Weight of the anchor term in the centroid objective.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AxisArg {
    #[value(name = "z_up")]
    ZUp,
    #[value(name = "x_up")]
    XUp,
    #[value(name = "y_up")]
    YUp,
}

impl From<AxisArg> for AxisConvention {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::ZUp => AxisConvention::ZUp,
            AxisArg::XUp => AxisConvention::XUp,
            AxisArg::YUp => AxisConvention::YUp,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Svd,
    Pca,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Svd => Method::Svd,
            MethodArg::Pca => Method::Pca,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CenterArg {
    Spherical,
    Plain,
}

impl From<CenterArg> for CenterKind {
    fn from(c: CenterArg) -> Self {
        match c {
            CenterArg::Spherical => CenterKind::Spherical,
            CenterArg::Plain => CenterKind::Plain,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PredictorArg {
    Oracle,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus and spines, with manifest.json.
    Gen {
        /// Generation spec (JSON); flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of isolated corpus vertebrae.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of spines to generate.
        #[arg(long)]
        spines: Option<usize>,
    },
    /// Encode masks into a descriptor file.
    Encode {
        /// Encode every corpus instance listed in this manifest.
        #[arg(long, conflicts_with = "input")]
        manifest: Option<PathBuf>,
        /// Volumes to encode; every label of each volume becomes one row.
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "spherical")]
        center: CenterArg,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Spherical centroid of each label, as JSON on stdout.
    Centroid {
        #[arg(long)]
        input: PathBuf,
        /// Restrict to one label.
        #[arg(long)]
        label: Option<u16>,
        /// Also compare against the exhaustive search.
        #[arg(long)]
        exhaustive: bool,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Fit a low-rank basis to a descriptor file.
    Basis {
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value = "svd")]
        method: MethodArg,
        /// Manifest whose mean instance size is stored with the basis.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct descriptors through a basis and score them.
    Reconstruct {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        /// Manifest with the masks the descriptor rows came from.
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated ranks to evaluate (nested truncations); default the basis rank.
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        /// Per-instance CSV (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write each reconstruction as a volume into this directory.
        #[arg(long)]
        volumes: Option<PathBuf>,
    },
    /// Refine a coarse labeled volume.
    Refine {
        #[arg(long)]
        coarse: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long, value_enum, default_value = "oracle")]
        predictor: PredictorArg,
        /// Ground truth for the oracle predictor.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reconstruct through meshes and write one STL per label here.
        #[arg(long)]
        emit_mesh: Option<PathBuf>,
        /// Coarse-center jitter amplitude in voxels (one value for all axes).
        #[arg(long)]
        jitter: Option<f64>,
        #[arg(long)]
        jitter_seed: Option<u64>,
    },
    /// Per-label Dice, Hausdorff and ASD of a prediction.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// CSV output (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ablation sweeps over a generated corpus, as CSV.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        /// Sampling intervals 3, 5, 10.
        #[arg(long)]
        interval: bool,
        /// Ranks 100, 200, 500, full.
        #[arg(long)]
        rank: bool,
        /// Spherical versus plain centroid.
        #[arg(long)]
        centroid: bool,
        /// Polar axis x, y, z.
        #[arg(long)]
        axis: bool,
        /// SVD versus PCA at the configured rank.
        #[arg(long)]
        method: bool,
        /// CSV output (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::data(e.to_string()))?;
    }
    let config = config::Config::load(cli.config.as_deref())?;
    commands::dispatch(cli.command, config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
