use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latte_core::data::{Format, Stage};
use latte_core::models::{ContextName, ModelKind};
use latte_core::similarity::LawKind;

#[derive(Debug, Parser)]
#[command(name = "latte-rec", version, about = "Rating-smoothed tensor recommenders and top-n benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a ratings file into a dataset artifact.
    Ingest {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        data: DataOpts,
    },
    /// Temporal split plus leave-last-out holdouts of a dataset artifact.
    Split {
        #[command(flatten)]
        common: CommonOpts,
        /// Dataset artifact written by `ingest`.
        #[arg(long)]
        input: Option<String>,
        #[arg(long)]
        test_frac: Option<f64>,
    },
    /// Train one model on a split artifact.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Split artifact written by `split`.
        #[arg(long)]
        input: Option<String>,
        #[command(flatten)]
        model: ModelOpts,
    },
    /// Score a trained model on a split's holdout.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Split artifact written by `split`.
        #[arg(long)]
        input: Option<String>,
        /// Model artifact written by `train` or `tune`.
        #[arg(long)]
        model_path: PathBuf,
        #[command(flatten)]
        eval: EvalOpts,
    },
    /// Grid-search hyperparameters on a split's validation holdout.
    Tune {
        #[command(flatten)]
        common: CommonOpts,
        /// Split artifact written by `split`.
        #[arg(long)]
        input: Option<String>,
        #[command(flatten)]
        model: ModelOpts,
        #[command(flatten)]
        eval: EvalOpts,
    },
    /// Full pipeline from a ratings file to a report.
    Run(PipelineOpts),
    /// Full pipeline for two or more models on one shared split.
    Compare(PipelineOpts),
}

#[derive(Debug, Args)]
pub struct PipelineOpts {
    #[command(flatten)]
    pub common: CommonOpts,
    #[command(flatten)]
    pub data: DataOpts,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[command(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    pub eval: EvalOpts,
    /// Tune each model on the validation holdout instead of using the given
    /// hyperparameters.
    #[arg(long)]
    pub tune: bool,
}

#[derive(Debug, Args, Default)]
pub struct CommonOpts {
    /// INI file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (ingest, split, train) or directory (other subcommands).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct DataOpts {
    /// Ratings file, or `USERS,ITEMS,SHIFT,SEED` with `--format synthetic`.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Group the native scale into this many rating values.
    #[arg(long)]
    pub scale_k: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ModelOpts {
    /// Repeat to compare several models.
    #[arg(long, value_enum)]
    pub model: Vec<ModelArg>,
    #[arg(long, value_enum)]
    pub law: Option<LawArg>,
    /// Tucker ranks; PureSVD uses the first.
    #[arg(long, value_name = "R1,R2,R3", value_parser = parse_ranks)]
    pub ranks: Option<(usize, usize, usize)>,
    #[arg(long)]
    pub norm_factor: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// HOOI sweep cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// HOOI fit-improvement tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct EvalOpts {
    #[arg(long, value_enum)]
    pub context: Option<ContextArg>,
    #[arg(long)]
    pub topn: Option<usize>,
    /// Ratings at or above this value are positive.
    #[arg(long)]
    pub threshold: Option<u32>,
    #[arg(long, value_enum)]
    pub stage: Option<StageArg>,
}

pub fn parse_ranks(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(format!("expected three comma-separated ranks, got '{s}'"));
    };
    let p = |x: &str| x.parse::<usize>().map_err(|_| format!("'{x}' is not a non-negative integer"));
    Ok((p(a)?, p(b)?, p(c)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    /// `user::item::rating::timestamp` lines.
    Dat,
    /// Headed `user,item,rating,timestamp` CSV.
    Csv,
    /// Generated shifted population.
    Synthetic,
}

impl FormatArg {
    /// `None` for generated data.
    pub fn file_format(self) -> Option<Format> {
        match self {
            FormatArg::Dat => Some(Format::MovielensDat),
            FormatArg::Csv => Some(Format::Csv),
            FormatArg::Synthetic => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Random,
    MostPopular,
    PureSvd,
    Ease,
    Coffee,
    Latte,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Random => ModelKind::Random,
            ModelArg::MostPopular => ModelKind::MostPopular,
            ModelArg::PureSvd => ModelKind::PureSvd,
            ModelArg::Ease => ModelKind::Ease,
            ModelArg::Coffee => ModelKind::Coffee,
            ModelArg::Latte => ModelKind::Latte,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LawArg {
    Identity,
    Linear,
    Sigmoid,
    Arctan,
    CubeRoot,
}

impl From<LawArg> for LawKind {
    fn from(l: LawArg) -> Self {
        match l {
            LawArg::Identity => LawKind::Identity,
            LawArg::Linear => LawKind::Linear,
            LawArg::Sigmoid => LawKind::Sigmoid,
            LawArg::Arctan => LawKind::Arctan,
            LawArg::CubeRoot => LawKind::CubeRoot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContextArg {
    /// "5"
    Only5,
    /// "4"+"5"
    #[value(name = "45")]
    FourFive,
    /// "3"+"4"+"5"
    #[value(name = "345")]
    ThreeFourFive,
    /// "3"+"4"+"5"-"1"-"2"
    #[value(name = "345m21")]
    ThreeFourFiveMinusTwoOne,
}

impl From<ContextArg> for ContextName {
    fn from(c: ContextArg) -> Self {
        match c {
            ContextArg::Only5 => ContextName::Only5,
            ContextArg::FourFive => ContextName::FourFive,
            ContextArg::ThreeFourFive => ContextName::ThreeFourFive,
            ContextArg::ThreeFourFiveMinusTwoOne => ContextName::ThreeFourFiveMinusTwoOne,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Validation,
    Test,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Validation => Stage::Validation,
            StageArg::Test => Stage::Test,
        }
    }
}
