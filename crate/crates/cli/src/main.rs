//! Command-line surface: `train`, `predict`, `evaluate`, `simulate`, and
//! `report`.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 data/parse error,
//! 4 numerical/state error. Diagnostics go to stderr; `report` writes its
//! tables to stdout, the other commands write files.

use std::collections::HashMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maxmachine::dataset::read_two_column;
use maxmachine::{
    applicability_report, build_artifact, evaluate, fit_baseline, generate, load_config,
    load_triplets, make_holdout, posterior_predictive, run, Config, Error, FactorLayer,
    GibbsConfig, HierarchicalModel, HoldoutMask, ModelArtifact, PosteriorTrace, Result,
    TripletDataset, UNKNOWN_TYPE,
};

#[derive(Parser)]
#[command(
    name = "maxmachine",
    version,
    about = "Probabilistic Boolean matrix factorization with per-dimension reliabilities"
)]
struct Cli {
    /// Sampler threads; 1 keeps the fully sequential, reproducible stream.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and write a model artifact (JSON).
    Train(TrainArgs),
    /// Score object-attribute cells with a trained model.
    Predict(PredictArgs),
    /// Hold out cells, retrain, and compare model vs baseline by ROC-AUC.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic planted dataset.
    Simulate(SimulateArgs),
    /// Summarize a trained model (codes matrix or per-type applicability).
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Pairs CSV: `object_id,attribute_id`, no header.
    #[arg(long)]
    pairs: PathBuf,
    /// Types CSV: `object_id,type`, no header; enables the hierarchical
    /// type prior.
    #[arg(long)]
    types: Option<PathBuf>,
    /// Latent dimensions; overrides the config value.
    #[arg(long)]
    dims: Option<usize>,
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sampler seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Drop attributes present on fewer than this fraction of objects;
    /// overrides the config value.
    #[arg(long)]
    min_attr_freq: Option<f64>,
    /// Output path for the model artifact.
    #[arg(long)]
    out: PathBuf,
    /// Retain full posterior samples in the artifact (larger file, exact
    /// posterior predictive at predict time).
    #[arg(long)]
    keep_samples: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model artifact.
    #[arg(long)]
    model: PathBuf,
    /// Cells CSV to score: `object_id,attribute_id`, no header.
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    cells: Option<PathBuf>,
    /// Score every object x attribute cell.
    #[arg(long)]
    all: bool,
    /// Output CSV (`object_id,attribute_id,probability`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Pairs CSV: `object_id,attribute_id`, no header.
    #[arg(long)]
    pairs: PathBuf,
    /// Types CSV: `object_id,type`, no header; enables the hierarchical
    /// type prior and the type-frequency baseline's grouping.
    #[arg(long)]
    types: Option<PathBuf>,
    /// Fraction of cells to hold out; overrides the config value.
    #[arg(long)]
    holdout_frac: Option<f64>,
    /// Clusters CSV `object_id,cluster` for the per-cluster breakdown;
    /// defaults to the type labels.
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the holdout and the sampler; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Drop attributes present on fewer than this fraction of objects;
    /// overrides the config value.
    #[arg(long)]
    min_attr_freq: Option<f64>,
    /// Output report CSV (`cluster,auc_model,auc_baseline,delta,n_cells`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML config file; the `synth_*` keys drive generation.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prefix for `<prefix>_pairs.csv`, `<prefix>_types.csv`,
    /// `<prefix>_clusters.csv`, and `<prefix>_truth.json`.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Trained model artifact.
    #[arg(long)]
    model: PathBuf,
    /// Attribute id for the per-type applicability table.
    #[arg(long, conflicts_with = "codes", required_unless_present = "codes")]
    attribute: Option<String>,
    /// How many types to list, by descending mean probability.
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Emit the posterior-mean code matrix with per-dimension nu and
    /// lambda_hat columns.
    #[arg(long)]
    codes: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Lookup(_)
        | Error::Version { .. } => 3,
        _ => 4,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    if cli.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("could not build the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train(args) => train(args, cli.threads),
        Command::Predict(args) => predict(args),
        Command::Evaluate(args) => evaluate_cmd(args, cli.threads),
        Command::Simulate(args) => simulate(args),
        Command::Report(args) => report(args),
    }
}

/// Loads the config (or defaults), applies CLI overrides, and re-validates.
fn resolve_config(
    path: Option<&Path>,
    dims: Option<usize>,
    seed: Option<u64>,
    holdout: Option<f64>,
    min_attr_freq: Option<f64>,
) -> Result<Config> {
    let mut config = match path {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if let Some(d) = dims {
        config.dims = d;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(h) = holdout {
        config.holdout = h;
    }
    if let Some(f) = min_attr_freq {
        config.min_attr_freq = f;
    }
    config.validate()?;
    Ok(config)
}

/// The sampler schedule; `--threads 1` forces the sequential stream.
fn gibbs_for(config: &Config, threads: usize) -> GibbsConfig {
    let mut gibbs = config.gibbs();
    gibbs.parallel = threads > 1;
    gibbs
}

/// Loads the dataset, warns about duplicates, then applies the configured
/// per-type cap and attribute-frequency filter.
fn prepare_data(pairs: &Path, types: Option<&Path>, config: &Config) -> Result<TripletDataset> {
    let (mut data, duplicates) = load_triplets(pairs, types)?;
    if duplicates > 0 {
        eprintln!("warning: {duplicates} duplicate pair(s) ignored");
    }
    if config.per_type_cap > 0 {
        data = data.per_type_subsample(config.per_type_cap, config.seed)?;
    }
    if config.min_attr_freq > 0.0 {
        data = data.filter_min_attr_freq(config.min_attr_freq)?;
    }
    Ok(data)
}

/// Trains flat or hierarchical on the observed part of the matrix.
fn fit_model(
    data: &TripletDataset,
    config: &Config,
    gibbs: &GibbsConfig,
    hierarchical: bool,
    x: &maxmachine::BinaryMatrix,
    mask: &HoldoutMask,
) -> Result<(PosteriorTrace, Option<(Vec<String>, Vec<usize>)>)> {
    let layer1 = FactorLayer::new(
        data.n_objects,
        data.n_attributes,
        config.dims,
        config.priors(),
    )?;
    if hierarchical {
        let (types, labels) = data.type_clamp()?;
        let type_of = types.assignments().to_vec();
        let mut model = HierarchicalModel::with_types(layer1, types, config.priors())?;
        let trace = model.run(x, mask, gibbs)?;
        Ok((trace, Some((labels, type_of))))
    } else {
        let mut layer = layer1;
        let trace = run(&mut layer, x, mask, gibbs)?;
        Ok((trace, None))
    }
}

fn train(args: TrainArgs, threads: usize) -> Result<()> {
    let config = resolve_config(
        args.config.as_deref(),
        args.dims,
        args.seed,
        None,
        args.min_attr_freq,
    )?;
    let gibbs = gibbs_for(&config, threads);
    let data = prepare_data(&args.pairs, args.types.as_deref(), &config)?;
    let x = data.to_matrix();
    let mask = HoldoutMask::empty(data.n_objects, data.n_attributes);
    let (trace, type_info) = fit_model(&data, &config, &gibbs, args.types.is_some(), &x, &mask)?;
    let artifact = build_artifact(&config, &data, type_info, &trace, args.keep_samples)?;
    artifact.save(&args.out)?;
    eprintln!(
        "trained {}x{} with {} dimensions: converged={} after {} sweeps, {} samples -> {}",
        data.n_objects,
        data.n_attributes,
        config.dims,
        trace.converged,
        trace.sweep_count,
        trace.samples.len(),
        args.out.display()
    );
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let artifact = ModelArtifact::load(&args.model)?;
    let (trace, fallback) = artifact.to_trace()?;
    if fallback {
        eprintln!(
            "warning: artifact has no retained samples; predictions use the posterior-mean \
             parameters"
        );
    }
    let cells: Vec<(usize, usize)> = if args.all {
        (0..artifact.n_objects)
            .flat_map(|n| (0..artifact.n_attributes).map(move |d| (n, d)))
            .collect()
    } else {
        let path = args.cells.as_ref().expect("clap enforces --cells or --all");
        read_two_column(path)?
            .into_iter()
            .map(|(o, a)| Ok((artifact.object_index(&o)?, artifact.attribute_index(&a)?)))
            .collect::<Result<_>>()?
    };
    let scores = posterior_predictive(&trace, &cells)?;
    let mut out = String::from("object_id,attribute_id,probability\n");
    for (&(n, d), p) in cells.iter().zip(&scores) {
        out.push_str(&format!(
            "{},{},{p}\n",
            artifact.object_ids[n], artifact.attribute_ids[d]
        ));
    }
    fs::write(&args.out, out).map_err(|e| Error::io(&args.out, e))?;
    eprintln!("wrote {} probabilities -> {}", scores.len(), args.out.display());
    Ok(())
}

/// Cluster label per object: the clusters file where given, else the types.
fn cluster_labels(data: &TripletDataset, path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        None => Ok(data.type_of.clone()),
        Some(p) => {
            let rows = read_two_column(p)?;
            let map: HashMap<&str, &str> = rows
                .iter()
                .map(|(o, c)| (o.as_str(), c.as_str()))
                .collect();
            Ok(data
                .object_ids
                .iter()
                .map(|id| {
                    map.get(id.as_str())
                        .map_or_else(|| UNKNOWN_TYPE.to_string(), |c| (*c).to_string())
                })
                .collect())
        }
    }
}

fn evaluate_cmd(args: EvaluateArgs, threads: usize) -> Result<()> {
    let config = resolve_config(
        args.config.as_deref(),
        None,
        args.seed,
        args.holdout_frac,
        args.min_attr_freq,
    )?;
    let gibbs = gibbs_for(&config, threads);
    let data = prepare_data(&args.pairs, args.types.as_deref(), &config)?;
    let x = data.to_matrix();
    let mask = make_holdout(data.n_objects, data.n_attributes, config.holdout, config.seed)?;
    let baseline = fit_baseline(&data, &mask, config.smoothing)?;
    let (trace, _) = fit_model(&data, &config, &gibbs, args.types.is_some(), &x, &mask)?;
    let clusters = cluster_labels(&data, args.clusters.as_deref())?;
    let report = evaluate(&trace, &baseline, &x, &mask, Some(&clusters))?;
    fs::write(&args.out, report.to_csv()).map_err(|e| Error::io(&args.out, e))?;
    eprintln!(
        "auc_model={:.6} auc_baseline={:.6} on {} held-out cells -> {}",
        report.auc_model,
        report.auc_baseline,
        report.n_test_cells,
        args.out.display()
    );
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = match args.config.as_deref() {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    config.validate()?;
    let (data, truth) = generate(&config.synth())?;
    let prefix = &args.out_prefix;
    let pairs_path = PathBuf::from(format!("{prefix}_pairs.csv"));
    let types_path = PathBuf::from(format!("{prefix}_types.csv"));
    let clusters_path = PathBuf::from(format!("{prefix}_clusters.csv"));
    let truth_path = PathBuf::from(format!("{prefix}_truth.json"));
    data.write_csv(&pairs_path, &types_path)?;
    // The planted types double as evaluation clusters.
    let mut clusters = String::new();
    for (id, ty) in data.object_ids.iter().zip(&data.type_of) {
        clusters.push_str(&format!("{id},{ty}\n"));
    }
    fs::write(&clusters_path, clusters).map_err(|e| Error::io(&clusters_path, e))?;
    let file = fs::File::create(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
    serde_json::to_writer(BufWriter::new(file), &truth)
        .map_err(|e| Error::parse(&truth_path, e.to_string()))?;
    eprintln!(
        "simulated {}x{} ({} pairs, {} types) -> {prefix}_{{pairs,types,clusters}}.csv and \
         {prefix}_truth.json",
        data.n_objects,
        data.n_attributes,
        data.pairs.len(),
        config.synth_t
    );
    Ok(())
}

/// The posterior-mean code matrix: one row per dimension plus the clamped
/// noise row (active everywhere), with per-dimension nu and lambda_hat.
fn codes_csv(artifact: &ModelArtifact) -> String {
    let l = artifact.n_dims;
    let d = artifact.n_attributes;
    let mut out = String::from("dimension");
    for id in &artifact.attribute_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push_str(",nu,lambda_hat\n");
    for li in 0..=l {
        if li < l {
            out.push_str(&li.to_string());
            for dd in 0..d {
                out.push_str(&format!(",{}", artifact.u_mean[li * d + dd]));
            }
        } else {
            out.push_str("noise");
            for _ in 0..d {
                out.push_str(",1");
            }
        }
        let stats = &artifact.dimension_stats[li];
        out.push_str(&format!(",{},{}\n", stats.nu, stats.lambda_hat));
    }
    out
}

fn report(args: ReportArgs) -> Result<()> {
    let artifact = ModelArtifact::load(&args.model)?;
    if args.codes {
        print!("{}", codes_csv(&artifact));
        return Ok(());
    }
    let attribute = args
        .attribute
        .as_deref()
        .ok_or_else(|| Error::Config("report needs --codes or --attribute".into()))?;
    let (trace, fallback) = artifact.to_trace()?;
    if fallback {
        eprintln!(
            "warning: artifact has no retained samples; the table uses the posterior-mean \
             parameters"
        );
    }
    let data = artifact.to_dataset();
    let rows = applicability_report(&trace, &data, attribute, args.top_k)?;
    print!("{}", maxmachine::eval::applicability_csv(&rows));
    Ok(())
}
