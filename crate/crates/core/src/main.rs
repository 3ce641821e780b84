use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ponn_core::dataset::{
    add_noise_features, convert_with, load_logged_csv, load_supervised_csv, read_json,
    split_indices, write_json, write_logged_csv, ConversionManifest, FeatureSchema, HiddenRewards,
    LoadOptions, LoggedDataset, LoggingPolicy, Normalizer,
};
use ponn_core::evaluation::{accuracy, ActionPolicy};
use ponn_core::harness::{run_experiment, ExperimentConfig};
use ponn_core::policy::{self, NetworkJson, PolicyArchitecture, PolicyNetwork, TrainConfig};
use ponn_core::propensity::{self, importance_weights, FitOptions, PropensityModel, WeightCap};
use ponn_core::relevance::{FeatureMasks, IpsStats, Loss, RelevanceReport, StatsOptions};
use ponn_core::util::seeded_rng;

#[derive(Parser)]
#[command(name = "ponn", version, about = "Policy learning from biased logged bandit data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a supervised CSV into logged bandit feedback.
    Convert(ConvertArgs),
    /// Fit the multinomial-logistic logging-policy model.
    FitPropensity(FitArgs),
    /// Compute relevance scores and per-action feature masks.
    SelectFeatures(SelectArgs),
    /// Train a policy network on logged data.
    Train(TrainArgs),
    /// Accuracy of a network or logging policy against full reward tables.
    Evaluate(EvaluateArgs),
    /// Run a full experiment from a config file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct Common {
    /// Feature schema JSON; all features are continuous when omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Reuse these normalization constants instead of fitting them on the file.
    #[arg(long)]
    normalize_with: Option<PathBuf>,
    /// Number of actions; inferred from the data when omitted.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output CSV; sidecars are written next to it.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    kappa: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard-normal noise columns to append.
    #[arg(long, default_value_t = 0)]
    noise: usize,
    /// Train,validation,test fractions; writes one file per split.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<f64>>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    logged: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct WeightArgs {
    /// Fitted propensity model; recorded propensities are used when omitted.
    #[arg(long)]
    propensity_model: Option<PathBuf>,
    /// Truncation level m. Defaults to √n with a fitted model.
    #[arg(long)]
    cap_m: Option<f64>,
    /// Disable truncation.
    #[arg(long, conflicts_with = "cap_m")]
    no_cap: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Abs,
    Squared,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    logged: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0.03)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.005)]
    lambda2: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Abs)]
    loss: LossArg,
    /// Bin count for continuous features.
    #[arg(long)]
    bins: Option<usize>,
    #[command(flatten)]
    weights: WeightArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    logged: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Relevance report whose masks to use; all features when omitted.
    #[arg(long)]
    relevance: Option<PathBuf>,
    /// Policy layer widths; empty for the linear policy.
    #[arg(long, value_delimiter = ',', default_value = "50,100")]
    layers: Vec<String>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lambda3: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[command(flatten)]
    weights: WeightArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, conflicts_with = "logging_policy")]
    network: Option<PathBuf>,
    /// Logging policy JSON written by `convert`.
    #[arg(long)]
    logging_policy: Option<PathBuf>,
    /// Logged or supervised CSV holding the test contexts.
    #[arg(long)]
    test: PathBuf,
    /// Full reward table for the test rows.
    #[arg(long)]
    hidden: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    #[arg(long)]
    lambda3: Option<Vec<f64>>,
    #[arg(long)]
    lr: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Report JSON path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Plain-text table path; printed to stdout when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Identity on `[0, 1]`, for files that are already normalized.
fn unit_normalizer(schema: &FeatureSchema) -> Normalizer {
    let d = schema.d();
    Normalizer {
        mins: vec![0.0; d],
        maxs: vec![1.0; d],
        continuous: (0..d)
            .map(|i| matches!(schema.kind(i), ponn_core::dataset::FeatureKind::Continuous))
            .collect(),
    }
}

struct Loaded {
    schema: Option<FeatureSchema>,
    normalizer: Option<Normalizer>,
}

impl Loaded {
    fn new(c: &Common) -> Result<Self> {
        let schema = c.schema.as_deref().map(FeatureSchema::load_json).transpose()?;
        let normalizer = c
            .normalize_with
            .as_deref()
            .map(read_json::<Normalizer>)
            .transpose()
            .context("reading normalizer")?;
        Ok(Loaded { schema, normalizer })
    }

    fn options(&self, k: Option<usize>) -> LoadOptions<'_> {
        LoadOptions {
            schema: self.schema.as_ref(),
            k,
            normalizer: self.normalizer.as_ref(),
        }
    }

    fn logged(&self, path: &Path, k: Option<usize>) -> Result<LoggedDataset> {
        let (ds, _) = load_logged_csv(path, &self.options(k))
            .with_context(|| format!("loading {}", path.display()))?;
        Ok(ds)
    }
}

fn convert(args: ConvertArgs) -> Result<()> {
    let loaded = Loaded::new(&args.common)?;
    let (sup, _) = load_supervised_csv(&args.input, &loaded.options(args.common.k))
        .with_context(|| format!("loading {}", args.input.display()))?;
    let sup = add_noise_features(&sup, args.noise, ponn_core::util::derive_seed(args.seed, "noise"));
    let mut rng = seeded_rng(args.seed);
    let policy = LoggingPolicy::draw(sup.d(), sup.k(), args.kappa, &mut rng)?;
    let parts: Vec<(String, Vec<usize>)> = match &args.split {
        None => vec![(String::new(), (0..sup.len()).collect())],
        Some(f) => {
            if f.len() != 3 {
                bail!("--split takes three fractions, got {}", f.len());
            }
            let s = split_indices(sup.len(), (f[0], f[1], f[2]), ponn_core::util::derive_seed(args.seed, "split"))?;
            vec![
                (".train".into(), s.train),
                (".validation".into(), s.validation),
                (".test".into(), s.test),
            ]
        }
    };
    let mut parts: Vec<(String, _)> = parts
        .into_iter()
        .map(|(name, idx)| (name, sup.subset(&idx)))
        .collect();
    if args.split.is_some() {
        let train = &parts[0].1;
        let norm = Normalizer::fit(train.schema(), train.rows().iter().map(|(x, _)| x.as_slice()));
        for (_, p) in &mut parts {
            p.normalize(&norm);
        }
    }
    for (name, part) in &parts {
        let (logged, hidden) = convert_with(&policy, part, &mut rng)?;
        let csv = sibling(&args.output, &format!("{name}.csv"));
        write_logged_csv(&logged, &csv)?;
        hidden.write_csv(&sibling(&csv, ".hidden.csv"))?;
        println!("wrote {} ({} rows)", csv.display(), logged.len());
    }
    let manifest = ConversionManifest {
        kappa: args.kappa,
        seed: args.seed,
        theta_digest: policy.digest(),
        n: sup.len(),
        d: sup.d(),
        k: sup.k(),
    };
    write_json(&manifest, &sibling(&args.output, ".manifest.json"))?;
    write_json(&policy, &sibling(&args.output, ".policy.json"))?;
    write_json(&unit_normalizer(sup.schema()), &sibling(&args.output, ".normalizer.json"))?;
    Ok(())
}

fn fit_propensity(args: FitArgs) -> Result<()> {
    let loaded = Loaded::new(&args.common)?;
    let ds = loaded.logged(&args.logged, args.common.k)?;
    let opts = FitOptions {
        l2: args.l2,
        max_iters: args.max_iters,
        ..FitOptions::default()
    };
    let (model, trace) = propensity::fit_traced(&ds, &opts)?;
    write_json(&model, &args.output)?;
    println!(
        "iterations {}, converged {}, objective {:.6}",
        trace.iterations,
        trace.converged,
        trace.objective.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn weights_for(ds: &LoggedDataset, w: &WeightArgs, cap_n: usize) -> Result<Vec<f64>> {
    let (props, default_cap) = match &w.propensity_model {
        Some(path) => {
            let model: PropensityModel = read_json(path).context("reading propensity model")?;
            (model.logged_propensities(ds)?, Some(WeightCap::for_sample_size(cap_n)?))
        }
        None => match ds.true_propensities() {
            Some(p) => (p, None),
            None => bail!("no propensity column; pass --propensity-model"),
        },
    };
    let cap = if w.no_cap {
        None
    } else if let Some(m) = w.cap_m {
        Some(WeightCap::new(m)?)
    } else {
        default_cap
    };
    Ok(importance_weights(&props, cap)?)
}

fn select_features(args: SelectArgs) -> Result<()> {
    let loaded = Loaded::new(&args.common)?;
    let ds = loaded.logged(&args.logged, args.common.k)?;
    let weights = weights_for(&ds, &args.weights, ds.len())?;
    let loss = match args.loss {
        LossArg::Abs => Loss::Abs,
        LossArg::Squared => Loss::Squared,
    };
    let stats = IpsStats::compute(&ds, &weights, loss, StatsOptions { bins: args.bins })?;
    let (report, masks) = stats.select(args.lambda1, args.lambda2)?;
    write_json(&report, &args.output)?;
    for a in 0..masks.k() {
        println!("action {}: {:?}", a + 1, masks.selected(a));
    }
    Ok(())
}

fn parse_layers(raw: &[String]) -> Result<Vec<usize>> {
    raw.iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad layer width `{s}`")))
        .collect()
}

fn train(args: TrainArgs) -> Result<()> {
    let loaded = Loaded::new(&args.common)?;
    let ds = loaded.logged(&args.logged, args.common.k)?;
    let val = loaded.logged(&args.validation, Some(ds.k()))?;
    let w_train = weights_for(&ds, &args.weights, ds.len())?;
    let w_val = weights_for(&val, &args.weights, ds.len())?;
    let masks = match &args.relevance {
        Some(path) => read_json::<RelevanceReport>(path).context("reading relevance report")?.masks(),
        None => FeatureMasks::all(ds.k(), ds.d()),
    };
    let arch = PolicyArchitecture::new(masks, parse_layers(&args.layers)?, args.seed)?;
    let cfg = TrainConfig {
        lambda3: args.lambda3,
        lr: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        patience: args.patience,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let (net, summary) = policy::train(arch, &ds, &w_train, &val, &w_val, &cfg)?;
    write_json(&net.to_json(), &args.output)?;
    println!(
        "epochs {}, best epoch {}, validation loss {:.6}",
        summary.epochs_run, summary.best_epoch, summary.best_validation_loss
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let loaded = Loaded::new(&args.common)?;
    let hidden = HiddenRewards::read_csv(&args.hidden)?;
    let contexts: Vec<Vec<f64>> = match load_logged_csv(&args.test, &loaded.options(Some(hidden.k()))) {
        Ok((ds, _)) => ds.records().iter().map(|r| r.x.clone()).collect(),
        Err(_) => {
            let (sup, _) = load_supervised_csv(&args.test, &loaded.options(Some(hidden.k())))?;
            sup.rows().iter().map(|(x, _)| x.clone()).collect()
        }
    };
    let policy: Box<dyn ActionPolicy> = match (&args.network, &args.logging_policy) {
        (Some(p), _) => Box::new(PolicyNetwork::from_json(&read_json::<NetworkJson>(p)?)?),
        (None, Some(p)) => Box::new(read_json::<LoggingPolicy>(p)?),
        (None, None) => bail!("pass --network or --logging-policy"),
    };
    let acc = accuracy(policy.as_ref(), &contexts, Some(&hidden))?;
    println!("{}", serde_json::json!({ "accuracy": acc, "n": contexts.len() }));
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<bool> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(a) = args.algorithms {
        cfg.algorithms = a;
    }
    if let Some(v) = args.lambda3 {
        cfg.policy.lambda3 = v;
    }
    if let Some(v) = args.lr {
        cfg.policy.lr = v;
    }
    if let Some(e) = args.epochs {
        cfg.policy.epochs = e;
    }
    if let Some(l) = args.layers {
        cfg.policy.layers = l;
    }
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    if let Some(path) = &args.output {
        write_json(&report, path)?;
    }
    let table = report.table();
    match &args.table {
        Some(path) => std::fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{table}"),
    }
    Ok(report.all_runs_completed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Convert(a) => convert(a).map(|_| true),
        Command::FitPropensity(a) => fit_propensity(a).map(|_| true),
        Command::SelectFeatures(a) => select_features(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Evaluate(a) => evaluate(a).map(|_| true),
        Command::Experiment(a) => experiment(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
