use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "kgex", version, about = "Train, calibrate and explain knowledge graph embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an embedding model on a dataset directory.
    Train(TrainArgs),
    /// Fit a Platt calibrator on the validation split.
    Calibrate(CalibrateArgs),
    /// Explain one target triple.
    Explain(ExplainArgs),
    /// Explain many target triples.
    ExplainBatch(BatchArgs),
    /// Remove-and-retrain evaluation of explanations.
    Roar(RoarArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Calibrate(_) => "calibrate",
            Command::Explain(_) => "explain",
            Command::ExplainBatch(_) => "explain-batch",
            Command::Roar(_) => "roar",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Train(a) => &a.common,
            Command::Calibrate(a) => &a.common,
            Command::Explain(a) => &a.common,
            Command::ExplainBatch(a) => &a.common,
            Command::Roar(a) => &a.common,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Dataset directory holding train.txt, valid.txt and test.txt. Relative
    /// paths are also looked up under $KGEX_DATA_DIR.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Output directory [default: runs/<command>-<timestamp>]
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// TOML config file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Worker thread cap
    #[arg(long)]
    pub threads: Option<usize>,

    /// Run on a single worker thread
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// desk, paper-fb15k237 or paper-wn18rr
    #[arg(long)]
    pub profile: Option<String>,
    /// transe, distmult or complex
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Negatives per positive
    #[arg(long)]
    pub eta: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Early-stopping patience in epochs
    #[arg(long)]
    pub patience: Option<usize>,
    /// Early-stopping check interval in epochs
    #[arg(long)]
    pub check_interval: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ExplainFlags {
    /// Neighbours per endpoint
    #[arg(long)]
    pub m: Option<usize>,
    /// Subject and object weights, e.g. 0.5,0.5
    #[arg(long)]
    pub weights: Option<String>,
    /// Hop level of the explanation graph
    #[arg(long)]
    pub n: Option<usize>,
    /// strict or permissive
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub max_examples: Option<usize>,
    /// Also sample predicates from the latent space
    #[arg(long)]
    pub all_predicates: bool,
    /// auto, brute-force or partition-tree
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Replace an existing calibrator
    #[arg(long)]
    pub refit: bool,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Corruptions per validation triple
    #[arg(long, default_value_t = 1)]
    pub negatives: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GraphFormat {
    Json,
    Dot,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Target as subject,predicate,object labels
    #[arg(long, conflicts_with = "select_target")]
    pub target: Option<String>,
    /// Pick the most probable non-circular test triple
    #[arg(long)]
    pub select_target: bool,
    #[command(flatten)]
    pub explain: ExplainFlags,
    /// Explanation graph format
    #[arg(long, value_enum, default_value_t = GraphFormat::Json)]
    pub format: GraphFormat,
}

#[derive(Args, Debug)]
pub struct BatchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Tab-separated subject/predicate/object lines
    #[arg(long, conflicts_with = "all_test", required_unless_present = "all_test")]
    pub targets: Option<PathBuf>,
    /// Explain every test triple
    #[arg(long)]
    pub all_test: bool,
    #[command(flatten)]
    pub explain: ExplainFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScenarioChoice {
    Roar,
    RevRoar,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SubsetChoice {
    #[value(name = "1")]
    One,
    All,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExplainerChoice {
    Example,
    Random,
    Both,
}

#[derive(Args, Debug)]
pub struct RoarArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub explain: ExplainFlags,
    #[arg(long, value_enum, default_value_t = ScenarioChoice::Both)]
    pub scenario: ScenarioChoice,
    #[arg(long, value_enum, default_value_t = SubsetChoice::Both)]
    pub subset: SubsetChoice,
    #[arg(long, value_enum, default_value_t = ExplainerChoice::Example)]
    pub explainer: ExplainerChoice,
    /// Comma-separated epochs [default: 10,20,...,100]
    #[arg(long)]
    pub checkpoints: Option<String>,
    /// Target as subject,predicate,object labels [default: selected from the test split]
    #[arg(long)]
    pub target: Option<String>,
}
