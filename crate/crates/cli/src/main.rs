use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coldstart::checkpoint::Checkpoint;
use coldstart::config::RunConfig;
use coldstart::data::parse::{parse_bookcrossing, parse_movielens, BookCrossingPaths, MovieLensPaths};
use coldstart::data::{generate_synthetic, Corpus, SyntheticConfig};
use coldstart::eval::MetricsReport;
use coldstart::experiment::{run_ablation, Experiment, RunOutcome};
use coldstart::gradcheck::{run_gradcheck, GradcheckConfig};
use coldstart::meta::{EpochMetrics, MetaHyper};
use coldstart::Error;

const CHECKPOINT_FILE: &str = "checkpoint.mamo";
const TRAIN_LOG_FILE: &str = "train_log.csv";
const METRICS_FILE: &str = "metrics.csv";

#[derive(Parser)]
#[command(name = "coldstart", version, about = "Memory-augmented meta-learning for cold-start rating prediction")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered synthetic corpus.
    Synth(SynthArgs),
    /// Convert a raw MovieLens-1M or Book-crossing dump to canonical CSVs.
    Ingest(IngestArgs),
    /// Meta-train on a canonical corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test users of a corpus.
    Eval(EvalArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate the memory model next to its no-memory reduction.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 100)]
    items: usize,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    #[arg(long, default_value_t = 0.3)]
    noise_sd: f64,
    #[arg(long, default_value_t = 20)]
    ratings_per_user: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetFormat {
    Movielens,
    Bookcrossing,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, value_enum)]
    format: DatasetFormat,
    /// Directory holding the raw files.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Full-scale defaults.
    Movielens,
    /// Desk-scale defaults for synthetic corpora.
    Synthetic,
}

/// Run configuration: preset, then `--config` JSON, then individual flags.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_enum, default_value = "movielens")]
    preset: Preset,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Canonical corpus directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    user_batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    support_passes: Option<usize>,
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long)]
    support_size: Option<usize>,
    #[arg(long)]
    record_cap: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ndcg_n: Option<Vec<usize>>,
    /// `order_key_cutoff` or `id_percentile`.
    #[arg(long)]
    user_cold_rule: Option<String>,
    #[arg(long)]
    user_cold_cutoff: Option<i64>,
    #[arg(long)]
    user_warm_fraction: Option<f64>,
    #[arg(long)]
    item_warm_min_ratings: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Where `metrics.csv` goes; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    /// Perturb one analytic gradient (negative control).
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Core(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e {
                Error::Config(_) | Error::Shape { .. } => 2,
                Error::Data(_)
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Checkpoint(_)
                | Error::UndefinedMetric(_)
                | Error::Contract(_) => 3,
                Error::Divergence(_) | Error::Oracle { .. } => 4,
            },
            Failure::Verification(_) => 5,
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let base = match self.preset {
            Preset::Movielens => RunConfig::default(),
            Preset::Synthetic => RunConfig::synthetic(),
        };
        let mut value = serde_json::to_value(base)?;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let file: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let serde_json::Value::Object(entries) = file else {
                return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
            };
            let target = value.as_object_mut().expect("config serialises to an object");
            for (k, v) in entries {
                target.insert(k, v);
            }
        }
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;

        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        set!(
            seed, workers, embed_dim, layers, slots, rho, lambda, tau, alpha, beta, gamma, user_batch, epochs,
            support_passes, split_ratio, support_size, record_cap, ndcg_n, user_cold_cutoff, user_warm_fraction,
            item_warm_min_ratings
        );
        if let Some(rule) = &self.user_cold_rule {
            cfg.user_cold_rule = serde_json::from_value(serde_json::Value::String(rule.clone()))
                .map_err(|_| Error::Config(format!("unknown user cold rule {rule:?}")))?;
        }
        if let Some(dir) = &self.data {
            cfg.data_dir = Some(dir.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus, Error> {
    let dir = cfg
        .data_dir
        .as_deref()
        .ok_or_else(|| Error::Config("no corpus given (use --data or data_dir)".into()))?;
    Corpus::load(dir)
}

fn write_train_log(path: &Path, log: &[EpochMetrics], append: bool) -> Result<(), Error> {
    let mut text = if append && path.exists() {
        fs::read_to_string(path).map_err(|e| io_err(path, e))?
    } else {
        "epoch,train_query_mae,wall_seconds\n".to_string()
    };
    for m in log {
        let _ = writeln!(text, "{},{:.6},{:.3}", m.epoch + 1, m.train_query_mae, m.wall_seconds);
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Keeps only the log rows of epochs a resumed checkpoint has completed.
fn truncate_train_log(path: &Path, completed: usize) -> Result<(), Error> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let kept: Vec<&str> = text.lines().take(completed + 1).collect();
    fs::write(path, kept.join("\n") + "\n").map_err(|e| io_err(path, e))
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let data = generate_synthetic(&SyntheticConfig {
        n_users: args.users,
        n_items: args.items,
        n_clusters: args.clusters,
        noise_sd: args.noise_sd,
        seed: args.seed,
        ratings_per_user: args.ratings_per_user,
        ..Default::default()
    })?;
    create_dir(&args.out)?;
    data.write(&args.out)?;
    println!(
        "wrote {} users, {} items, {} ratings in {} clusters to {}",
        data.corpus.users.len(),
        data.corpus.items.len(),
        data.corpus.ratings.len(),
        args.clusters,
        args.out.display()
    );
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> CmdResult {
    let parsed = match args.format {
        DatasetFormat::Movielens => parse_movielens(&MovieLensPaths::from_dir(&args.input))?,
        DatasetFormat::Bookcrossing => parse_bookcrossing(&BookCrossingPaths::from_dir(&args.input))?,
    };
    create_dir(&args.out)?;
    parsed.corpus.write(&args.out)?;
    println!("{}", parsed.report);
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CmdResult {
    let cfg = args.config.resolve()?;
    let corpus = load_corpus(&cfg)?;
    let exp = Experiment::new(cfg, &corpus)?;
    create_dir(&args.out)?;
    let ck_path = args.out.join(CHECKPOINT_FILE);
    let log_path = args.out.join(TRAIN_LOG_FILE);

    let (mut state, start) = if args.resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        let fresh = exp.checkpoint(exp.initial_state()?, ck.header.epoch);
        if ck.header.dims != exp.dims || ck.header.slots != exp.config.slots {
            return Err(Error::Config(format!(
                "checkpoint holds dims {:?} with {} slots; the configuration asks for {:?} with {}",
                ck.header.dims, ck.header.slots, exp.dims, exp.config.slots
            ))
            .into());
        }
        // Only the epoch budget may change between the original run and its resumption.
        let same_run = MetaHyper {
            epochs: fresh.header.hyper.epochs,
            ..ck.header.hyper
        } == fresh.header.hyper;
        if ck.header.seed != fresh.header.seed || !same_run {
            return Err(Error::Config("checkpoint seed or hyperparameters differ from the configuration".into()).into());
        }
        log::info!("resuming after epoch {}", ck.header.epoch);
        truncate_train_log(&log_path, ck.header.epoch)?;
        let mut state = ck.state;
        state.hyper = fresh.header.hyper;
        (state, ck.header.epoch)
    } else {
        let state = exp.initial_state()?;
        exp.checkpoint(state.clone(), 0).save(&ck_path)?;
        write_train_log(&log_path, &[], false)?;
        (state, 0)
    };

    let log = exp.train_from(&mut state, start, |ck, m| {
        ck.save(&ck_path)?;
        write_train_log(&log_path, std::slice::from_ref(m), true)?;
        println!("epoch {:>3}  train query MAE {:.4}  ({:.1}s)", m.epoch + 1, m.train_query_mae, m.wall_seconds);
        Ok(())
    })?;
    println!(
        "trained {} epochs on {} users; checkpoint at {}",
        log.len(),
        exp.data.train.len(),
        ck_path.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let mut cfg = args.config.resolve()?;
    // The split must be the one the checkpoint was trained under.
    if args.config.seed.is_none() {
        cfg.seed = ck.header.seed;
    }
    let corpus = load_corpus(&cfg)?;
    let exp = Experiment::new(cfg, &corpus)?;
    let report = exp.evaluate(&ck.state)?;
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => args.checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    create_dir(&out)?;
    report.write_csv(&out.join(METRICS_FILE))?;
    print!("{report}");
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> CmdResult {
    let defaults = GradcheckConfig::default();
    let report = run_gradcheck(&GradcheckConfig {
        instances: args.instances,
        epsilon: args.epsilon,
        tolerance: args.tolerance,
        seed: args.seed,
        dims: coldstart::model::ModelDims {
            embed_dim: args.embed_dim,
            ..defaults.dims
        },
        corrupt: args.corrupt,
        ..defaults
    })?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification("gradient check failed".into()))
    }
}

fn save_run(dir: &Path, exp: &Experiment, run: &RunOutcome) -> Result<(), Error> {
    create_dir(dir)?;
    exp.checkpoint(run.state.clone(), run.log.len()).save(&dir.join(CHECKPOINT_FILE))?;
    write_train_log(&dir.join(TRAIN_LOG_FILE), &run.log, false)?;
    run.report.write_csv(&dir.join(METRICS_FILE))
}

fn side_by_side(memory: &MetricsReport, ablation: &MetricsReport) -> String {
    let mut out = String::from("scenario,metric,N,memory,ablation,count\n");
    let (m_csv, a_csv) = (memory.to_csv(), ablation.to_csv());
    for (m, a) in m_csv.lines().zip(a_csv.lines()).skip(1) {
        let m: Vec<&str> = m.split(',').collect();
        let a: Vec<&str> = a.split(',').collect();
        let _ = writeln!(out, "{},{},{},{},{},{}", m[0], m[1], m[2], m[3], a[3], m[4]);
    }
    out
}

fn cmd_ablate(args: &AblateArgs) -> CmdResult {
    let cfg = args.config.resolve()?;
    let corpus = load_corpus(&cfg)?;
    let exp = Experiment::new(cfg, &corpus)?;
    let outcome = run_ablation(&exp)?;
    save_run(&args.out.join("memory"), &exp, &outcome.memory)?;
    save_run(&args.out.join("ablation"), &exp.ablation(), &outcome.ablation)?;
    let table = side_by_side(&outcome.memory.report, &outcome.ablation.report);
    let path = args.out.join(METRICS_FILE);
    fs::write(&path, &table).map_err(|e| io_err(&path, e))?;
    println!("memory model:\n{}", outcome.memory.report);
    println!("no-memory ablation:\n{}", outcome.ablation.report);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Verification(msg) => eprintln!("verification failed: {msg}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}
