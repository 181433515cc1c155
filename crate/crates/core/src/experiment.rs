//! Config-driven fitting and repeated experiments.
//!
//! An experiment loads a dataset, and for every training size and
//! repetition splits it, grid-searches the configured method, and evaluates
//! the selected model on the test ids. Results go to `results.csv` in the
//! output directory, one row per repetition followed by mean/std rows per
//! training size.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_csv_with, read_csv, split_with_validation, ColumnSelector, CsvOptions, Label, SampleMatrix, SplitMode,
    Target2d, TrainSize,
};
use crate::error::{Error, Result};
use crate::eval::{balanced_grid_accuracy, grid_search, write_pr_csv, EvalReport, GridSpec, RankClass, ValidationPolicy};
use crate::io::{file_sha256, provenance_line, sha256_hex, write_atomic};
use crate::kernel::{KernelDictionary, KernelManifest, KernelSpec, PrecomputedKernels};
use crate::mkl::{train, LineSearch, Method, MklConfig, MklTrace};
use crate::one_class::OneClassModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_column: Option<ColumnSelector>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class_column: Option<ColumnSelector>,
        #[serde(default)]
        standardize: bool,
    },
    /// Synthetic 2D target class, optionally mixed with uniform outliers.
    Gen2d {
        seed: u64,
        n_areas: usize,
        n_points: usize,
        #[serde(default)]
        n_outliers: usize,
    },
    /// Kernel matrices from a manifest; examples are the matrix indices.
    /// The optional CSV holds a `label` column and optionally `class`.
    Precomputed {
        manifest: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<PathBuf>,
    },
}

/// A loaded dataset with whatever the kernels and metrics need.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub samples: SampleMatrix,
    pub store: PrecomputedKernels,
    /// Kernels to use when the config lists none.
    pub default_kernels: Vec<KernelSpec>,
    /// Generating region of synthetic data.
    pub target: Option<Target2d>,
    pub checksum: String,
}

impl DatasetSource {
    pub fn load(&self) -> Result<LoadedData> {
        match self {
            DatasetSource::Csv {
                path,
                label_column,
                class_column,
                standardize,
            } => {
                let opts = CsvOptions {
                    label_column: label_column.clone(),
                    class_column: class_column.clone(),
                    standardize: *standardize,
                };
                Ok(LoadedData {
                    samples: load_csv_with(path, &opts)?,
                    store: PrecomputedKernels::default(),
                    default_kernels: KernelSpec::rbf_grid(),
                    target: None,
                    checksum: file_sha256(path)?,
                })
            }
            DatasetSource::Gen2d {
                seed,
                n_areas,
                n_points,
                n_outliers,
            } => {
                let target = Target2d::generate(*seed, *n_areas, *n_points)?.with_outliers(*seed, *n_outliers)?;
                let mut buf = Vec::new();
                target.samples.write_csv(&mut buf)?;
                Ok(LoadedData {
                    samples: target.samples.clone(),
                    store: PrecomputedKernels::default(),
                    default_kernels: KernelSpec::rbf_grid(),
                    target: Some(target),
                    checksum: sha256_hex(&buf),
                })
            }
            DatasetSource::Precomputed { manifest, labels } => {
                let m = KernelManifest::load(manifest)?;
                let store = PrecomputedKernels::load_manifest(manifest)?;
                let mut hashed = file_sha256(manifest)?;
                let samples = match labels {
                    Some(p) => {
                        let opts = CsvOptions {
                            label_column: Some(ColumnSelector::Name("label".into())),
                            class_column: None,
                            standardize: false,
                        };
                        let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
                        let has_class = text
                            .lines()
                            .find(|l| !l.trim_start().starts_with('#'))
                            .is_some_and(|h| h.split(',').any(|c| c.trim() == "class"));
                        let opts = CsvOptions {
                            class_column: has_class.then(|| ColumnSelector::Name("class".into())),
                            ..opts
                        };
                        let t = read_csv(text.as_bytes(), &opts)?;
                        if t.len() != m.size {
                            return Err(Error::arg(format!(
                                "{} labels for {} precomputed examples",
                                t.len(),
                                m.size
                            )));
                        }
                        hashed.push_str(&file_sha256(p)?);
                        let s = SampleMatrix::index_only((0..m.size).collect(), t.labels().map(<[Label]>::to_vec))?;
                        match t.classes() {
                            Some(c) => s.with_classes(c.to_vec())?,
                            None => s,
                        }
                    }
                    None => SampleMatrix::index_only((0..m.size).collect(), None)?,
                };
                Ok(LoadedData {
                    samples,
                    store,
                    default_kernels: m.specs(),
                    target: None,
                    checksum: sha256_hex(hashed.as_bytes()),
                })
            }
        }
    }
}

/// Outer-loop and inner-solver settings shared by every fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub max_outer_iters: usize,
    pub line_search: LineSearch,
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        let d = MklConfig::default();
        Self {
            gap_tol: d.gap_tol,
            max_outer_iters: d.max_outer_iters,
            line_search: d.line_search,
            kkt_tol: d.kkt_tol,
        }
    }
}

impl SolverOptions {
    pub fn mkl(&self, c: f64, lambda: f64) -> MklConfig {
        MklConfig {
            c,
            lambda,
            gap_tol: self.gap_tol,
            max_outer_iters: self.max_outer_iters,
            line_search: self.line_search,
            kkt_tol: self.kkt_tol,
        }
    }
}

/// Relabels by class: `target_class` becomes `+1`, everything else `-1`.
fn relabel(samples: &mut SampleMatrix, target_class: Option<i64>) -> Result<()> {
    if let Some(t) = target_class {
        let classes = samples
            .classes()
            .ok_or_else(|| Error::arg("target_class needs a class column"))?;
        let labels = classes
            .iter()
            .map(|&c| if c == t { Label::Target } else { Label::Outlier })
            .collect();
        samples.set_labels(labels)?;
    }
    Ok(())
}

fn rank_classes(samples: &SampleMatrix, target: Option<i64>, similar: Option<i64>) -> Option<Vec<RankClass>> {
    let t = target?;
    let classes = samples.classes()?;
    Some(
        classes
            .iter()
            .map(|&c| {
                if c == t {
                    RankClass::Target
                } else if Some(c) == similar {
                    RankClass::Similar
                } else {
                    RankClass::Other
                }
            })
            .collect(),
    )
}

fn build_dict(
    data: &LoadedData,
    kernels: &Option<Vec<KernelSpec>>,
    train: SampleMatrix,
    unit_trace: bool,
) -> Result<KernelDictionary> {
    let specs = kernels.as_ref().unwrap_or(&data.default_kernels);
    let dict = KernelDictionary::from_specs(specs, &data.store, train)?;
    if unit_trace {
        dict.with_unit_trace()
    } else {
        Ok(dict)
    }
}

/// Canonical hash of a serializable config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub dataset: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<KernelSpec>>,
    pub method: Method,
    pub c: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Dictionary entry for single-kernel methods.
    #[serde(default)]
    pub kernel: usize,
    /// Fit on `+1` rows only when labels are present.
    #[serde(default = "yes")]
    pub targets_only: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<i64>,
    #[serde(default)]
    pub unit_trace: bool,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn yes() -> bool {
    true
}

#[derive(Debug)]
pub struct FitOutput {
    pub model: OneClassModel,
    pub trace: Option<MklTrace>,
    pub data: LoadedData,
}

pub fn fit_from_config(config: &FitConfig) -> Result<FitOutput> {
    let mut data = config.dataset.load()?;
    relabel(&mut data.samples, config.target_class)?;
    let fit_set = match (config.targets_only, data.samples.labels()) {
        (true, Some(labels)) => {
            let pos: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_outlier()).collect();
            data.samples.select(&pos)
        }
        _ => data.samples.clone(),
    };
    let dict = build_dict(&data, &config.kernels, fit_set, config.unit_trace)?;
    let (model, trace) = train(config.method, &dict, Some(config.kernel), &config.solver.mkl(config.c, config.lambda))?;
    Ok(FitOutput { model, trace, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<KernelSpec>>,
    pub method: Method,
    #[serde(default = "GridSpec::paper_c_grid")]
    pub c: Vec<f64>,
    #[serde(default = "zero_lambda")]
    pub lambda: Vec<f64>,
    /// Defaults to positive acceptance in supervised mode, AUC otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<ValidationPolicy>,
    #[serde(default = "supervised")]
    pub mode: SplitMode,
    #[serde(default = "half")]
    pub train_sizes: Vec<TrainSize>,
    /// Positives held out for model selection; 0 selects on the training set.
    #[serde(default)]
    pub validation_count: usize,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similar_class: Option<i64>,
    #[serde(default)]
    pub unit_trace: bool,
    /// Resolution of the accuracy grid for synthetic 2D data.
    #[serde(default = "grid_resolution")]
    pub grid_resolution: usize,
    #[serde(default)]
    pub solver: SolverOptions,
    pub output_dir: PathBuf,
}

fn zero_lambda() -> Vec<f64> {
    vec![0.0]
}
fn supervised() -> SplitMode {
    SplitMode::Supervised
}
fn half() -> Vec<TrainSize> {
    vec![TrainSize::Fraction(0.5)]
}
fn one() -> usize {
    1
}
fn grid_resolution() -> usize {
    50
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::arg("repetitions must be >= 1"));
        }
        if self.c.is_empty() || self.lambda.is_empty() {
            return Err(Error::arg("C and lambda grids must be nonempty"));
        }
        if self.train_sizes.is_empty() {
            return Err(Error::arg("train_sizes must be nonempty"));
        }
        Ok(())
    }

    pub fn policy(&self) -> ValidationPolicy {
        self.policy.unwrap_or(match self.mode {
            SplitMode::Supervised => ValidationPolicy::PositiveAcceptance,
            SplitMode::Unsupervised => ValidationPolicy::Auc,
        })
    }

    /// Hash of everything that determines the results; the output
    /// directory is excluded.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        config_hash(&c)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One repetition at one training size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRow {
    pub train_size: String,
    pub repetition: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub kernel: Option<usize>,
    pub c: Option<f64>,
    pub lambda: Option<f64>,
    pub n_support: Option<usize>,
    pub accuracy: Option<f64>,
    pub grid_accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub detections: Option<usize>,
    pub win: Option<bool>,
    pub rank_first_target: Option<usize>,
    pub rank_first_similar: Option<usize>,
    pub error: Option<String>,
}

const METRICS: [&str; 7] = [
    "n_support",
    "accuracy",
    "grid_accuracy",
    "auc",
    "detections",
    "win",
    "rank_first_target",
];

impl RepetitionRow {
    fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "n_support" => self.n_support.map(|v| v as f64),
            "accuracy" => self.accuracy,
            "grid_accuracy" => self.grid_accuracy,
            "auc" => self.auc,
            "detections" => self.detections.map(|v| v as f64),
            "win" => self.win.map(|w| if w { 1.0 } else { 0.0 }),
            "rank_first_target" => self.rank_first_target.map(|v| v as f64),
            "rank_first_similar" => self.rank_first_similar.map(|v| v as f64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub rows: Vec<RepetitionRow>,
    pub failures: usize,
    pub config_hash: String,
    pub dataset_checksum: String,
}

fn size_label(s: &TrainSize) -> String {
    match s {
        TrainSize::Count(n) => n.to_string(),
        TrainSize::Fraction(f) => format!("{f}"),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

const HEADER: &str = "train_size,repetition,seed,method,n_train,n_test,kernel,c,lambda,n_support,accuracy,grid_accuracy,auc,detections,win,rank_first_target,rank_first_similar,error";

fn results_csv(config: &ExperimentConfig, summary: &ExperimentSummary) -> String {
    let mut out = provenance_line(&summary.config_hash);
    let _ = writeln!(out, "# dataset-sha256={}", summary.dataset_checksum);
    let _ = writeln!(out, "{HEADER}");
    for size in &config.train_sizes {
        let label = size_label(size);
        let rows: Vec<&RepetitionRow> = summary.rows.iter().filter(|r| r.train_size == label).collect();
        for r in &rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.train_size,
                r.repetition,
                r.seed,
                config.method,
                r.n_train,
                r.n_test,
                opt(r.kernel),
                opt(r.c),
                opt(r.lambda),
                opt(r.n_support),
                opt(r.accuracy),
                opt(r.grid_accuracy),
                opt(r.auc),
                opt(r.detections),
                opt(r.win),
                opt(r.rank_first_target),
                opt(r.rank_first_similar),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            );
        }
        let stats: Vec<Option<(f64, f64)>> = METRICS
            .iter()
            .chain(std::iter::once(&"rank_first_similar"))
            .map(|m| {
                let v: Vec<f64> = rows.iter().filter_map(|r| r.metric(m)).collect();
                mean_std(&v)
            })
            .collect();
        for (name, pick) in [("mean", 0usize), ("std", 1)] {
            let cells: Vec<String> = stats
                .iter()
                .map(|s| opt(s.map(|(m, d)| if pick == 0 { m } else { d })))
                .collect();
            let _ = writeln!(out, "{label},{name},,{},,,,,,{},", config.method, cells.join(","));
        }
    }
    out
}

/// Runs the experiment and writes `results.csv`, `config.json` and per
/// repetition grid tables and PR curves under `output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let hash = config.hash()?;
    let mut data = config.dataset.load()?;
    relabel(&mut data.samples, config.target_class)?;
    let policy = config.policy();
    let grid = GridSpec {
        methods: vec![config.method],
        c: config.c.clone(),
        lambda: config.lambda.clone(),
    };
    let out_dir = &config.output_dir;
    let mut rows = Vec::new();

    for (si, size) in config.train_sizes.iter().enumerate() {
        for rep in 0..config.repetitions {
            let seed = config.seed.wrapping_add(rep as u64);
            let mut row = RepetitionRow {
                train_size: size_label(size),
                repetition: rep,
                seed,
                n_train: 0,
                n_test: 0,
                kernel: None,
                c: None,
                lambda: None,
                n_support: None,
                accuracy: None,
                grid_accuracy: None,
                auc: None,
                detections: None,
                win: None,
                rank_first_target: None,
                rank_first_similar: None,
                error: None,
            };
            let result = (|| -> Result<()> {
                let plan = split_with_validation(&data.samples, *size, config.validation_count, config.mode, seed)?;
                let train = data.samples.subset(&plan.train_ids)?;
                let test = data.samples.subset(&plan.test_ids)?;
                row.n_train = train.len();
                row.n_test = test.len();
                let validation = if plan.validation_ids.is_empty() {
                    train.clone()
                } else {
                    data.samples.subset(&plan.validation_ids)?
                };
                let dict = build_dict(&data, &config.kernels, train, config.unit_trace)?;
                let outcome = grid_search(&dict, &validation, &grid, policy, &config.solver.mkl(0.1, 0.0))?;
                let mut table = provenance_line(&hash).into_bytes();
                outcome.write_csv(&mut table)?;
                write_atomic(out_dir.join(format!("grid_{si}_{rep}.csv")), &table)?;
                let (best, model) = match (outcome.best_result(), &outcome.best_model) {
                    (Some(b), Some(m)) => (b, m),
                    _ => {
                        let first = outcome.results.iter().find_map(|r| r.error.clone()).unwrap_or_default();
                        return Err(Error::arg(format!("no grid cell succeeded: {first}")));
                    }
                };
                row.kernel = best.cell.kernel;
                row.c = Some(best.cell.c);
                row.lambda = Some(best.cell.lambda);
                row.n_support = Some(model.n_support());
                let classes = rank_classes(&test, config.target_class, config.similar_class);
                let report = EvalReport::evaluate(model, &test, classes.as_deref())?;
                row.accuracy = report.accuracy;
                row.auc = report.auc;
                row.detections = report.detections_before_false_alarm;
                row.win = report.rank.map(|r| r.win);
                row.rank_first_target = report.rank.map(|r| r.rank_first_target);
                row.rank_first_similar = report.rank.and_then(|r| r.rank_first_similar);
                if let Some(t) = &data.target {
                    row.grid_accuracy = Some(balanced_grid_accuracy(model, t, config.grid_resolution)?);
                }
                if !report.pr_curve.is_empty() {
                    let mut pr = provenance_line(&hash).into_bytes();
                    write_pr_csv(&report.pr_curve, &mut pr)?;
                    write_atomic(out_dir.join(format!("pr_{si}_{rep}.csv")), &pr)?;
                }
                Ok(())
            })();
            if let Err(e) = result {
                log::warn!("train size {} repetition {rep}: {e}", row.train_size);
                row.error = Some(e.to_string());
            }
            rows.push(row);
        }
    }

    let summary = ExperimentSummary {
        failures: rows.iter().filter(|r| r.error.is_some()).count(),
        rows,
        config_hash: hash,
        dataset_checksum: data.checksum.clone(),
    };
    write_atomic(out_dir.join("results.csv"), results_csv(config, &summary).as_bytes())?;
    let mut cfg = serde_json::to_string_pretty(config)?;
    cfg.push('\n');
    write_atomic(out_dir.join("config.json"), cfg.as_bytes())?;
    Ok(summary)
}
