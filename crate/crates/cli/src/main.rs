mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use raft_core::dataset::{default_bins, LoadOptions};
use raft_core::{load_csv, run_search, write_outputs, Error, MetricKind};

use crate::config::{parse_file, resolve, ConfigError, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "raft", version, about = "Cascading reinforcement-learned feature generation for tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a better feature space and write the results to `--out`.
    Run(RunArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// Flat `key = value` file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    target: Option<String>,
    /// auto | clf | reg
    #[arg(long)]
    task: Option<String>,
    /// euclidean | cosine
    #[arg(long)]
    distance: Option<String>,
    /// si | ae | gae | si+ae | si+gae | ae+gae | all
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    episodes: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Uniform random head/op/tail choices with no learning.
    #[arg(long)]
    bench: bool,
    /// f1_macro | precision_macro | recall_macro | one_minus_rae |
    /// one_minus_mae | one_minus_mse | one_minus_rmse
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    encoder_epochs: Option<String>,
    /// Clustering threshold multiplier.
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    bins: Option<String>,
    /// Comma-separated operation symbols.
    #[arg(long)]
    ops: Option<String>,
    #[arg(long)]
    max_size: Option<String>,
    #[arg(long)]
    cap: Option<String>,
    #[arg(long)]
    max_depth: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    actor_lr: Option<String>,
    #[arg(long)]
    critic_lr: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    clip_norm: Option<String>,
    #[arg(long)]
    n_trees: Option<String>,
    #[arg(long)]
    tree_depth: Option<String>,
    #[arg(long)]
    min_leaf: Option<String>,
    /// true | false
    #[arg(long)]
    gae_standardize: Option<String>,
    #[arg(long)]
    si_raw_count: bool,
    #[arg(long)]
    full_gradient_critic: bool,
    #[arg(long)]
    carry_features: bool,
    #[arg(long)]
    skip_tail_on_unary: bool,
    #[arg(long)]
    impute_median: bool,
    /// Write the trained agents to this file.
    #[arg(long)]
    checkpoint: Option<String>,
}

impl RunArgs {
    fn flags(&self) -> BTreeMap<String, String> {
        let valued = [
            ("input", &self.input),
            ("target", &self.target),
            ("task", &self.task),
            ("distance", &self.distance),
            ("encoder", &self.encoder),
            ("episodes", &self.episodes),
            ("steps", &self.steps),
            ("seed", &self.seed),
            ("out", &self.out),
            ("metric", &self.metric),
            ("k", &self.k),
            ("d", &self.d),
            ("encoder_epochs", &self.encoder_epochs),
            ("delta", &self.delta),
            ("bins", &self.bins),
            ("ops", &self.ops),
            ("max_size", &self.max_size),
            ("cap", &self.cap),
            ("max_depth", &self.max_depth),
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("actor_lr", &self.actor_lr),
            ("critic_lr", &self.critic_lr),
            ("hidden", &self.hidden),
            ("clip_norm", &self.clip_norm),
            ("n_trees", &self.n_trees),
            ("tree_depth", &self.tree_depth),
            ("min_leaf", &self.min_leaf),
            ("gae_standardize", &self.gae_standardize),
            ("checkpoint", &self.checkpoint),
        ];
        let switches = [
            ("bench", self.bench),
            ("si_raw_count", self.si_raw_count),
            ("full_gradient_critic", self.full_gradient_critic),
            ("carry_features", self.carry_features),
            ("skip_tail_on_unary", self.skip_tail_on_unary),
            ("impute_median", self.impute_median),
        ];
        valued
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v)))
            .chain(switches.into_iter().filter(|(_, on)| *on).map(|(k, _)| (k.to_string(), "true".into())))
            .collect()
    }
}

enum Failure {
    Config(String),
    Core(Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => EXIT_NUMERIC,
        Error::InvalidConfig(_)
        | Error::MetricTaskMismatch { .. }
        | Error::InvalidOperationSet(_)
        | Error::UnknownOperation(_) => EXIT_CONFIG,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_NUMERIC,
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
            parse_file(&text)?
        }
        None => BTreeMap::new(),
    };
    Ok(resolve(&file, &args.flags())?)
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args)?;
    let opts = LoadOptions {
        task: cfg.task,
        impute_median: cfg.impute_median,
    };
    let fs = load_csv(&cfg.input, &cfg.target, opts)?;
    log::info!("loaded {} rows × {} features from {}", fs.n_rows(), fs.n_cols(), cfg.input.display());

    let result = run_search(&fs, &cfg.search)?;
    cfg.record(
        "task",
        match fs.task() {
            raft_core::TaskKind::Classification => "clf",
            raft_core::TaskKind::Regression => "reg",
        },
    );
    cfg.record("metric", result.metric);
    cfg.record("bins", cfg.search.bins.unwrap_or_else(|| default_bins(fs.n_rows())));
    cfg.record("max_size", cfg.search.max_size.unwrap_or((2 * fs.n_cols()).max(1)));

    write_outputs(&result, &cfg.out)?;
    let echo = cfg.out.join("config.echo");
    std::fs::write(&echo, cfg.echo(&result.seeds)).map_err(|e| Failure::Config(format!("{}: {e}", echo.display())))?;

    if let (Some(path), Some(agents)) = (&cfg.checkpoint, &result.agents) {
        let f = File::create(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(f);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "raft agents v1")?;
            for a in agents {
                a.write_checkpoint(&mut *w)?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    }

    let metric: MetricKind = result.metric;
    println!("{metric} original {} final {}", result.original_score, result.best_score);
    println!("features original {} final {}", result.original.n_cols(), result.best.n_cols());
    println!("outputs in {}", cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
