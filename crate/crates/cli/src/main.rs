use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use mksvdd::dataset::{load_csv_with, ColumnSelector, CsvOptions, Target2d, TrainSize};
use mksvdd::eval::{write_pr_csv, EvalReport, RankClass};
use mksvdd::experiment::{config_hash, fit_from_config, run_experiment, DatasetSource, ExperimentConfig, FitConfig};
use mksvdd::graph_kernel::{build_graph_gram, write_graph_grams, GraphCollection, PathKernelGrid};
use mksvdd::io::{provenance_line, write_atomic};
use mksvdd::kernel::{write_matrix_text, Kernel, KernelManifest, KernelSpec, ManifestEntry};
use mksvdd::{Method, OneClassModel};

#[derive(Parser)]
#[command(name = "mksvdd", version, about = "Multiple-kernel SVDD and one-class SVM experiments")]
struct Cli {
    /// Worker threads for grid search and Gram computation.
    #[arg(long, global = true, env = "MKSVDD_WORKERS")]
    workers: Option<usize>,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and write it as JSON.
    Fit(FitArgs),
    /// Score a dataset with a saved model.
    Eval(EvalArgs),
    /// Run a repeated split / grid search / evaluate experiment.
    Experiment(ExperimentArgs),
    /// Generate a synthetic 2D target class.
    Gen2d(Gen2dArgs),
    /// Precompute Gram matrices for a CSV dataset.
    Gram(GramArgs),
    /// Precompute bag-of-paths graph kernels.
    GraphGram(GraphGramArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Fit configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Dictionary entry used by single-kernel methods.
    #[arg(long)]
    kernel: Option<usize>,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
    /// Output MKL trace CSV (multiple-kernel methods only).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON file with a `dataset` entry (a fit config works).
    #[arg(long, required_unless_present = "csv")]
    config: Option<PathBuf>,
    /// CSV test data, instead of --config.
    #[arg(long, conflicts_with = "config")]
    csv: Option<PathBuf>,
    #[arg(long, requires = "csv")]
    label_column: Option<ColumnSelector>,
    /// One-row summary CSV.
    #[arg(long)]
    report: PathBuf,
    /// Precision/recall curve CSV.
    #[arg(long)]
    pr: Option<PathBuf>,
    /// Per-example scores CSV.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    /// Training set sizes (counts), replacing the configured ones.
    #[arg(long, value_delimiter = ',')]
    train_sizes: Option<Vec<usize>>,
}

#[derive(Args)]
struct Gen2dArgs {
    #[arg(long)]
    seed: u64,
    /// Number of Gaussian areas (1 to 3).
    #[arg(long, default_value_t = 1)]
    areas: usize,
    #[arg(long)]
    points: usize,
    /// Uniform outliers appended with label -1.
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating blobs as JSON.
    #[arg(long)]
    blobs: Option<PathBuf>,
}

#[derive(Args)]
struct GramArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    label_column: Option<ColumnSelector>,
    /// Kernel specs such as `rbf:0.5` or `poly:2`; defaults to the RBF grid.
    #[arg(long = "kernel")]
    kernels: Vec<KernelSpec>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GraphGramArgs {
    /// Graph collection JSON.
    #[arg(long)]
    graphs: PathBuf,
    /// Path kernel grid JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

/// The parts of a config file `eval` needs.
#[derive(Deserialize)]
struct EvalInput {
    dataset: DatasetSource,
    #[serde(default)]
    target_class: Option<i64>,
    #[serde(default)]
    similar_class: Option<i64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn with_provenance(hash: &str, body: impl FnOnce(&mut Vec<u8>) -> mksvdd::Result<()>) -> Result<Vec<u8>> {
    let mut buf = provenance_line(hash).into_bytes();
    body(&mut buf)?;
    Ok(buf)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut config: FitConfig = read_json(&args.config)?;
    if let Some(m) = args.method {
        config.method = m;
    }
    if let Some(c) = args.c {
        config.c = c;
    }
    if let Some(l) = args.lambda {
        config.lambda = l;
    }
    if let Some(k) = args.kernel {
        config.kernel = k;
    }
    let hash = config_hash(&config)?;
    let out = fit_from_config(&config)?;
    out.model.save(&args.model)?;
    log::info!(
        "{}: {} support vectors, weights {:?}",
        config.method,
        out.model.n_support(),
        out.model.weights.as_slice()
    );
    match (&args.trace, &out.trace) {
        (Some(path), Some(trace)) => {
            for w in &trace.warnings {
                log::warn!("{w}");
            }
            write_atomic(path, &with_provenance(&hash, |b| trace.write_csv(b))?)?;
        }
        (Some(_), None) => log::warn!("{} has no MKL trace; --trace ignored", config.method),
        _ => {}
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut model = OneClassModel::load(&args.model)?;
    let (samples, classes, hash_src) = match (&args.config, &args.csv) {
        (Some(cfg), _) => {
            let input: EvalInput = read_json(cfg)?;
            let data = input.dataset.load()?;
            model.attach(&data.store)?;
            let mut samples = data.samples;
            if let Some(t) = input.target_class {
                let labels = samples
                    .classes()
                    .context("target_class needs a class column")?
                    .iter()
                    .map(|&c| if c == t { mksvdd::Label::Target } else { mksvdd::Label::Outlier })
                    .collect();
                samples.set_labels(labels)?;
            }
            let classes = input.target_class.and_then(|t| {
                samples.classes().map(|cs| {
                    cs.iter()
                        .map(|&c| {
                            if c == t {
                                RankClass::Target
                            } else if Some(c) == input.similar_class {
                                RankClass::Similar
                            } else {
                                RankClass::Other
                            }
                        })
                        .collect::<Vec<_>>()
                })
            });
            (samples, classes, std::fs::read(cfg)?)
        }
        (None, Some(csv)) => {
            let opts = CsvOptions {
                label_column: args.label_column.clone(),
                ..Default::default()
            };
            (load_csv_with(csv, &opts)?, None, csv.display().to_string().into_bytes())
        }
        (None, None) => bail!("either --config or --csv is required"),
    };
    let mut hash_input = std::fs::read(&args.model)?;
    hash_input.extend(hash_src);
    let hash = mksvdd::io::sha256_hex(&hash_input);

    let scores = model.score(&samples)?;
    let report = EvalReport::from_scores(&scores, samples.labels(), classes.as_deref())?;
    write_atomic(&args.report, &with_provenance(&hash, |b| report.write_csv(b))?)?;
    if let Some(path) = &args.pr {
        if report.pr_curve.is_empty() {
            log::warn!("precision/recall needs both classes; writing an empty curve");
        }
        write_atomic(path, &with_provenance(&hash, |b| write_pr_csv(&report.pr_curve, b))?)?;
    }
    if let Some(path) = &args.scores {
        let body = with_provenance(&hash, |b| {
            use std::io::Write;
            writeln!(b, "id,score,label")?;
            for (i, s) in scores.iter().enumerate() {
                let label = samples.labels().map(|l| l[i].value().to_string()).unwrap_or_default();
                writeln!(b, "{},{},{}", samples.ids()[i], s, label)?;
            }
            Ok(())
        })?;
        write_atomic(path, &body)?;
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<bool> {
    let mut config: ExperimentConfig = read_json(&args.config)?;
    if let Some(d) = args.output_dir {
        config.output_dir = d;
    }
    if let Some(r) = args.repetitions {
        config.repetitions = r;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(m) = args.method {
        config.method = m;
    }
    if let Some(sizes) = args.train_sizes {
        config.train_sizes = sizes.into_iter().map(TrainSize::Count).collect();
    }
    let summary = run_experiment(&config)?;
    log::info!(
        "{} rows written to {} (config {})",
        summary.rows.len(),
        config.output_dir.display(),
        summary.config_hash
    );
    if summary.failures > 0 {
        eprintln!("{} of {} repetitions failed; see results.csv", summary.failures, summary.rows.len());
    }
    Ok(summary.failures == 0)
}

fn cmd_gen2d(args: Gen2dArgs) -> Result<()> {
    let target = Target2d::generate(args.seed, args.areas, args.points)?.with_outliers(args.seed, args.outliers)?;
    let hash = config_hash(&serde_json::json!({
        "seed": args.seed, "areas": args.areas, "points": args.points, "outliers": args.outliers,
    }))?;
    write_atomic(&args.out, &with_provenance(&hash, |b| target.samples.write_csv(b))?)?;
    if let Some(path) = &args.blobs {
        let mut text = serde_json::to_string_pretty(&target.blobs)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_gram(args: GramArgs) -> Result<()> {
    let opts = CsvOptions {
        label_column: args.label_column,
        ..Default::default()
    };
    let x = load_csv_with(&args.csv, &opts)?;
    let specs = if args.kernels.is_empty() { KernelSpec::rbf_grid() } else { args.kernels };
    let mut matrices = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let gram = Kernel::from_spec(spec)?.gram(&x)?;
        let file = PathBuf::from(format!("k{i}.txt"));
        let mut buf = Vec::new();
        write_matrix_text(gram.values(), &mut buf)?;
        write_atomic(args.out_dir.join(&file), &buf)?;
        matrices.push(ManifestEntry {
            id: spec.to_string(),
            file,
            config: Some(serde_json::to_value(spec)?),
        });
    }
    let manifest = KernelManifest { size: x.len(), matrices };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(args.out_dir.join("manifest.json"), text.as_bytes())?;
    Ok(())
}

fn cmd_graph_gram(args: GraphGramArgs) -> Result<()> {
    let collection = GraphCollection::load(&args.graphs)?;
    let grid: PathKernelGrid = read_json(&args.config)?;
    let grams = build_graph_gram(&collection, &grid.configs())?;
    let manifest = write_graph_grams(&args.out_dir, &grams)?;
    log::info!(
        "{} kernels over {} graphs written to {}",
        manifest.matrices.len(),
        manifest.size,
        args.out_dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Fit(a) => cmd_fit(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Gen2d(a) => cmd_gen2d(a).map(|_| true),
        Command::Gram(a) => cmd_gram(a).map(|_| true),
        Command::GraphGram(a) => cmd_graph_gram(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
