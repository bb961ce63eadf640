mod commands;
mod input;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use krfws::align::Stages;
use krfws::config::Config;

/// Failure classes, mapped one-to-one onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<krfws::Error> for CliError {
    fn from(e: krfws::Error) -> Self {
        match e {
            krfws::Error::Numeric(_) | krfws::Error::Degenerate(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "krfws",
    version,
    about = "Train and evaluate KRFWS face alignment and head-pose models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the affine pose regression stage into a bundle.
    TrainApr(TrainArgs),
    /// Train the 3-D affine pose regression stage into a bundle.
    #[command(name = "train-3dapr")]
    Train3dApr(TrainArgs),
    /// Train the LBF cascade into a bundle.
    TrainLbf(TrainArgs),
    /// Train a head-pose model, or cross-validate one with --folds.
    TrainPose(PoseArgs),
    /// Compute normalized landmark errors for a split.
    Eval(EvalArgs),
    /// Run a bundle on images and write the predicted shapes.
    Predict(PredictArgs),
    /// Train and evaluate the full pipeline on synthetic faces.
    SynthBench(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file; unspecified keys keep defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed (overrides the `seed` key).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mean 3-D shape file (default: the built-in 68-point shape).
    #[arg(long)]
    pub mean_shape: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn load(&self) -> CliResult<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Where annotated landmark faces come from. Exactly one source is given.
#[derive(Args, Debug, Clone)]
pub struct LandmarkSource {
    /// 300-W root with afw/, helen/, lfpw/ and ibug/.
    #[arg(long, value_name = "DIR")]
    pub w300: Option<PathBuf>,
    /// List file of annotated images, one path per line, each with a sibling `.pts`.
    #[arg(long, value_name = "FILE")]
    pub list: Option<PathBuf>,
    /// Generate this many synthetic faces from the seed.
    #[arg(long, value_name = "COUNT")]
    pub synth: Option<usize>,
    /// Detector boxes, one `name x y w h` line per image.
    #[arg(long, value_name = "FILE")]
    pub bboxes: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    source: LandmarkSource,
    /// Bundle directory; existing stages other than the trained one are kept.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct PoseArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Pointing'04 root directory.
    #[arg(long, value_name = "DIR")]
    pointing04: Option<PathBuf>,
    /// Generate this many synthetic faces from the seed.
    #[arg(long, value_name = "COUNT")]
    synth: Option<usize>,
    /// Face boxes, one `name x y w h` line per image (default: whole image).
    #[arg(long, value_name = "FILE")]
    bboxes: Option<PathBuf>,
    /// Cross-validate instead of training one model: 2 (by session) or 5 (shuffled).
    #[arg(long, value_parser = ["2", "5"])]
    folds: Option<String>,
    /// Weighted splitting on or off (overrides `forest.weighted`).
    #[arg(long, action = clap::ArgAction::Set)]
    weighted: Option<bool>,
    /// Bundle directory, or the CSV output directory with --folds.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    source: LandmarkSource,
    /// Split of a 300-W root: common, challenging or full; lists are `custom`.
    #[arg(long, default_value = "full")]
    split: String,
    /// Error normalization: inter-pupil or inter-ocular.
    #[arg(long, default_value = "inter-pupil")]
    norm: String,
    /// Directory of predicted `.pts` files named after the images.
    #[arg(long, value_name = "DIR", conflicts_with = "model")]
    pred: Option<PathBuf>,
    /// Bundle to run instead of reading predictions.
    #[arg(long, value_name = "DIR")]
    model: Option<PathBuf>,
    /// Stages to run with --model, e.g. `apr,3dapr,lbf` or `none`.
    #[arg(long)]
    stages: Option<String>,
    /// Output directory for errors.csv and summary.csv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Bundle directory.
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// List file of images, one path per line.
    #[arg(long, value_name = "FILE")]
    list: Option<PathBuf>,
    /// Images to process.
    images: Vec<PathBuf>,
    /// Detector boxes, one `name x y w h` line per image (default: whole image).
    #[arg(long, value_name = "FILE")]
    bboxes: Option<PathBuf>,
    /// Stages to run, e.g. `apr,3dapr,lbf` or `none`.
    #[arg(long)]
    stages: Option<String>,
    /// Output directory for `.pts` files and poses.csv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Error normalization: inter-pupil or inter-ocular.
    #[arg(long, default_value = "inter-pupil")]
    norm: String,
    /// Output directory for the bundle and CSVs.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// Parses `apr,3dapr,lbf` (any subset) or `none`.
pub fn parse_stages(s: &str) -> CliResult<Stages> {
    let mut st = Stages::NONE;
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "apr" => st.apr = true,
            "3dapr" => st.apr3d = true,
            "lbf" => st.lbf = true,
            "none" => {}
            _ => return Err(CliError::Usage(format!("unknown stage `{part}`"))),
        }
    }
    Ok(st)
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("KRFWS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("KRFWS_THREADS must be a positive integer, got `{v}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::TrainApr(a) => commands::train_stage(
            "train-apr",
            &a.config,
            &a.source,
            &a.out,
            Stages {
                apr: true,
                ..Stages::NONE
            },
        ),
        Command::Train3dApr(a) => commands::train_stage(
            "train-3dapr",
            &a.config,
            &a.source,
            &a.out,
            Stages {
                apr3d: true,
                ..Stages::NONE
            },
        ),
        Command::TrainLbf(a) => commands::train_stage(
            "train-lbf",
            &a.config,
            &a.source,
            &a.out,
            Stages {
                lbf: true,
                ..Stages::NONE
            },
        ),
        Command::TrainPose(a) => commands::train_pose(&commands::PoseJob {
            config: &a.config,
            pointing04: a.pointing04.as_deref(),
            synth: a.synth,
            bboxes: a.bboxes.as_deref(),
            folds: a.folds.as_deref().map(|f| f.parse().expect("validated by clap")),
            weighted: a.weighted,
            out: &a.out,
        }),
        Command::Eval(a) => commands::eval(&commands::EvalJob {
            config: &a.config,
            source: &a.source,
            split: &a.split,
            norm: &a.norm,
            pred: a.pred.as_deref(),
            model: a.model.as_deref(),
            stages: a.stages.as_deref(),
            out: &a.out,
        }),
        Command::Predict(a) => commands::predict(
            &a.model,
            a.list.as_deref(),
            &a.images,
            a.bboxes.as_deref(),
            a.stages.as_deref(),
            &a.out,
        ),
        Command::SynthBench(a) => commands::synth_bench(&a.config, &a.norm, &a.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
