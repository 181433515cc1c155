//! Tabular ingestion, synthetic 2D target classes and train/validation/test
//! splitting.
//!
//! Every example carries a stable `id`. For feature-based kernels the id is
//! only bookkeeping; for precomputed kernels it is the row/column index into
//! the precomputed matrix.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class label of an example: `+1` target, `-1` outlier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Target,
    Outlier,
}

impl Label {
    pub fn value(self) -> i8 {
        match self {
            Label::Target => 1,
            Label::Outlier => -1,
        }
    }

    pub fn is_outlier(self) -> bool {
        self == Label::Outlier
    }

    fn parse(cell: &str) -> Option<Label> {
        let v: f64 = cell.trim().parse().ok()?;
        if v == 1.0 {
            Some(Label::Target)
        } else if v == -1.0 {
            Some(Label::Outlier)
        } else {
            None
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(Label::Target),
            -1 => Ok(Label::Outlier),
            other => Err(format!("label must be +1 or -1, got {other}")),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        l.value()
    }
}

/// Dense example matrix: one row per example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    features: Array2<f64>,
    labels: Option<Vec<Label>>,
    /// Optional integer class tags (e.g. shape categories), independent of the
    /// one-class labels.
    classes: Option<Vec<i64>>,
    ids: Vec<usize>,
}

impl SampleMatrix {
    /// Builds a matrix with ids `0..n`.
    pub fn new(features: Array2<f64>, labels: Option<Vec<Label>>) -> Result<Self> {
        let ids = (0..features.nrows()).collect();
        Self::with_ids(features, labels, ids)
    }

    pub fn with_ids(
        features: Array2<f64>,
        labels: Option<Vec<Label>>,
        ids: Vec<usize>,
    ) -> Result<Self> {
        let n = features.nrows();
        if ids.len() != n {
            return Err(Error::arg(format!("{} ids for {} rows", ids.len(), n)));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::arg(format!("{} labels for {} rows", l.len(), n)));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            classes: None,
            ids,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<Label>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::arg(format!(
                "row {i} has {} features, expected {dim}",
                r.len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| Error::arg(e.to_string()))?;
        Self::new(features, labels)
    }

    /// A featureless matrix whose ids index a precomputed kernel.
    pub fn index_only(ids: Vec<usize>, labels: Option<Vec<Label>>) -> Result<Self> {
        Self::with_ids(Array2::zeros((ids.len(), 0)), labels, ids)
    }

    pub fn with_classes(mut self, classes: Vec<i64>) -> Result<Self> {
        if classes.len() != self.len() {
            return Err(Error::arg(format!(
                "{} classes for {} rows",
                classes.len(),
                self.len()
            )));
        }
        self.classes = Some(classes);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn classes(&self) -> Option<&[i64]> {
        self.classes.as_deref()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn set_labels(&mut self, labels: Vec<Label>) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::arg("label count does not match row count"));
        }
        self.labels = Some(labels);
        Ok(())
    }

    /// Rows at the given positions, in that order.
    pub fn select(&self, positions: &[usize]) -> SampleMatrix {
        SampleMatrix {
            features: self.features.select(Axis(0), positions),
            labels: self
                .labels
                .as_ref()
                .map(|l| positions.iter().map(|&p| l[p]).collect()),
            classes: self
                .classes
                .as_ref()
                .map(|c| positions.iter().map(|&p| c[p]).collect()),
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
        }
    }

    /// Rows whose id is listed, in the order of `ids`.
    pub fn subset(&self, ids: &[usize]) -> Result<SampleMatrix> {
        let index: std::collections::HashMap<usize, usize> =
            self.ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
        let positions = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::arg(format!("unknown example id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select(&positions))
    }

    /// Per-feature standardization to zero mean and unit variance. Constant
    /// columns are only centered.
    pub fn standardized(&self) -> SampleMatrix {
        let mut out = self.clone();
        if self.is_empty() {
            return out;
        }
        let n = self.len() as f64;
        for mut col in out.features.columns_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            col.mapv_inplace(|v| if sd > 0.0 { (v - mean) / sd } else { v - mean });
        }
        out
    }

    /// Writes `x0..x{d-1}[,label][,class]` rows with a header.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        if self.classes.is_some() {
            header.push("class".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(l) = &self.labels {
                rec.push(l[i].value().to_string());
            }
            if let Some(c) = &self.classes {
                rec.push(c[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Picks a CSV column by zero-based index or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSelector {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for ColumnSelector {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnSelector::Index(i),
            Err(_) => ColumnSelector::Name(s.to_string()),
        })
    }
}

impl ColumnSelector {
    fn resolve(&self, header: Option<&[String]>, width: usize) -> Result<usize> {
        let idx = match self {
            ColumnSelector::Index(i) => *i,
            ColumnSelector::Name(name) => header
                .and_then(|h| h.iter().position(|c| c.trim() == name))
                .ok_or_else(|| Error::arg(format!("no column named {name:?}")))?,
        };
        if idx >= width {
            return Err(Error::arg(format!(
                "column {idx} out of range for {width} columns"
            )));
        }
        Ok(idx)
    }
}

/// CSV ingestion options. `#` lines are treated as comments; a header row is
/// detected when the first record contains a non-numeric field.
#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub label_column: Option<ColumnSelector>,
    pub class_column: Option<ColumnSelector>,
    pub standardize: bool,
}

pub fn load_csv(path: impl AsRef<Path>, label_column: Option<ColumnSelector>) -> Result<SampleMatrix> {
    load_csv_with(
        path,
        &CsvOptions {
            label_column,
            ..Default::default()
        },
    )
}

pub fn load_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<SampleMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_csv(file, opts)
}

pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<SampleMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = rdr.records();
    let first = match records.next() {
        Some(r) => r?,
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
    };
    let width = first.len();
    let is_header = first.iter().any(|c| c.parse::<f64>().is_err());
    let header: Option<Vec<String>> = is_header.then(|| first.iter().map(String::from).collect());

    let label_idx = opts
        .label_column
        .as_ref()
        .map(|s| s.resolve(header.as_deref(), width))
        .transpose()?;
    let class_idx = opts
        .class_column
        .as_ref()
        .map(|s| s.resolve(header.as_deref(), width))
        .transpose()?;

    let mut flat = Vec::new();
    let mut labels = Vec::new();
    let mut classes = Vec::new();
    let mut rows = 0usize;

    let mut ingest = |rec: &csv::StringRecord| -> Result<()> {
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if Some(j) == label_idx {
                let l = Label::parse(cell).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("label {cell:?} is not +1 or -1"),
                })?;
                labels.push(l);
            } else if Some(j) == class_idx {
                let c = cell.parse::<i64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("class {cell:?} is not an integer"),
                })?;
                classes.push(c);
            } else {
                let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::Parse {
                        line,
                        message: format!("field {} ({cell:?}) is not a finite number", j + 1),
                    }
                })?;
                flat.push(v);
            }
        }
        rows += 1;
        Ok(())
    };

    if !is_header {
        ingest(&first)?;
    }
    for rec in records {
        ingest(&rec?)?;
    }
    if rows == 0 {
        return Err(Error::Parse { line: 1, message: "no data rows".into() });
    }

    let dim = width - usize::from(label_idx.is_some()) - usize::from(class_idx.is_some());
    let features =
        Array2::from_shape_vec((rows, dim), flat).map_err(|e| Error::arg(e.to_string()))?;
    let mut m = SampleMatrix::new(features, label_idx.map(|_| labels))?;
    if class_idx.is_some() {
        m = m.with_classes(classes)?;
    }
    Ok(if opts.standardize { m.standardized() } else { m })
}

/// One Gaussian area of a synthetic 2D target class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 2],
    pub std: f64,
}

/// A synthetic 2D target class together with its generating blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target2d {
    pub blobs: Vec<Blob>,
    pub samples: SampleMatrix,
}

/// Radius, in blob standard deviations, of the ground-truth target region.
pub const TARGET_REGION_STDS: f64 = 2.0;

impl Target2d {
    /// Draws `n_points` from `n_areas` isotropic Gaussian blobs. Centers are
    /// uniform in `[-1, 1]^2`, standard deviations uniform in `[0.05, 0.3]`,
    /// and point `i` belongs to blob `i % n_areas`.
    pub fn generate(seed: u64, n_areas: usize, n_points: usize) -> Result<Self> {
        if !(1..=3).contains(&n_areas) {
            return Err(Error::arg(format!("n_areas must be 1, 2 or 3, got {n_areas}")));
        }
        if n_points < n_areas {
            return Err(Error::arg(format!(
                "n_points ({n_points}) must be at least n_areas ({n_areas})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<Blob> = (0..n_areas)
            .map(|_| Blob {
                center: [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
                std: rng.random_range(0.05..=0.3),
            })
            .collect();
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut flat = Vec::with_capacity(2 * n_points);
        for i in 0..n_points {
            let b = &blobs[i % n_areas];
            flat.push(b.center[0] + b.std * unit.sample(&mut rng));
            flat.push(b.center[1] + b.std * unit.sample(&mut rng));
        }
        let features = Array2::from_shape_vec((n_points, 2), flat).expect("shape");
        let samples = SampleMatrix::new(features, Some(vec![Label::Target; n_points]))?;
        Ok(Self { blobs, samples })
    }

    /// Whether `p` lies in the ground-truth region: within
    /// [`TARGET_REGION_STDS`] standard deviations of some blob center.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.blobs.iter().any(|b| {
            let dx = p[0] - b.center[0];
            let dy = p[1] - b.center[1];
            (dx * dx + dy * dy).sqrt() <= TARGET_REGION_STDS * b.std
        })
    }
}

impl Target2d {
    /// Appends `n_outliers` points labeled `-1`, drawn uniformly from
    /// `[-2, 2]^2` and rejected while they fall inside the target region.
    pub fn with_outliers(mut self, seed: u64, n_outliers: usize) -> Result<Self> {
        if n_outliers == 0 {
            return Ok(self);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ OUTLIER_STREAM);
        let mut rows: Vec<Vec<f64>> = self.samples.features().rows().into_iter().map(|r| r.to_vec()).collect();
        let mut labels = self
            .samples
            .labels()
            .map(<[Label]>::to_vec)
            .unwrap_or_else(|| vec![Label::Target; rows.len()]);
        let mut added = 0;
        while added < n_outliers {
            let p = [rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0)];
            if self.contains(p) {
                continue;
            }
            rows.push(p.to_vec());
            labels.push(Label::Outlier);
            added += 1;
        }
        self.samples = SampleMatrix::from_rows(&rows, Some(labels))?;
        Ok(self)
    }
}

/// Keeps the outlier draws independent of the blob draws for the same seed.
const OUTLIER_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Generates a synthetic 2D target class; see [`Target2d::generate`].
pub fn gen_2d_target(seed: u64, n_areas: usize, n_points: usize) -> Result<SampleMatrix> {
    Target2d::generate(seed, n_areas, n_points).map(|t| t.samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Train on positives only; test on the remainder.
    Supervised,
    /// Train and test on the full dataset.
    Unsupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainSize {
    Count(usize),
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub seed: u64,
    pub train_ids: Vec<usize>,
    pub validation_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl SplitPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Splits without a validation set. See [`split_with_validation`].
pub fn split(matrix: &SampleMatrix, size: TrainSize, mode: SplitMode, seed: u64) -> Result<SplitPlan> {
    split_with_validation(matrix, size, 0, mode, seed)
}

/// Supervised mode draws the training set uniformly from the `+1` examples,
/// then `validation_count` further positives; every other id goes to test.
/// Unsupervised mode ignores the sizes: train and test are both everything.
pub fn split_with_validation(
    matrix: &SampleMatrix,
    size: TrainSize,
    validation_count: usize,
    mode: SplitMode,
    seed: u64,
) -> Result<SplitPlan> {
    let ids = matrix.ids().to_vec();
    if mode == SplitMode::Unsupervised {
        return Ok(SplitPlan {
            mode,
            seed,
            train_ids: ids.clone(),
            validation_ids: Vec::new(),
            test_ids: ids,
        });
    }

    let labels = matrix
        .labels()
        .ok_or_else(|| Error::arg("supervised split requires labels"))?;
    let mut positives: Vec<usize> = ids
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Label::Target)
        .map(|(&id, _)| id)
        .collect();
    let n_train = match size {
        TrainSize::Count(n) => n,
        TrainSize::Fraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::arg(format!("train fraction {f} outside [0, 1]")));
            }
            (f * positives.len() as f64).round() as usize
        }
    };
    if n_train == 0 {
        return Err(Error::arg("training set would be empty"));
    }
    if n_train + validation_count > positives.len() {
        return Err(Error::arg(format!(
            "requested {n_train} train + {validation_count} validation examples but only {} positives",
            positives.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    let mut train_ids = positives[..n_train].to_vec();
    let mut validation_ids = positives[n_train..n_train + validation_count].to_vec();
    train_ids.sort_unstable();
    validation_ids.sort_unstable();

    let taken: BTreeSet<usize> = train_ids.iter().chain(&validation_ids).copied().collect();
    let test_ids = ids.into_iter().filter(|id| !taken.contains(id)).collect();
    Ok(SplitPlan {
        mode,
        seed,
        train_ids,
        validation_ids,
        test_ids,
    })
}
