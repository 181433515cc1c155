//! Evaluation metrics and hyperparameter grid search.
//!
//! Scores passed to the metrics are outlier scores: larger means more likely
//! to be an outlier. Outliers are the positive class of the precision/recall
//! curve; for rankings, examples are sorted by acceptance (ascending outlier
//! score).

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, SampleMatrix, Target2d};
use crate::error::{Error, Result};
use crate::kernel::KernelDictionary;
use crate::mkl::{train, Method, MklConfig};
use crate::one_class::OneClassModel;

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let outliers = labels.iter().filter(|l| l.is_outlier()).count();
    let targets = labels.len() - outliers;
    if outliers == 0 || targets == 0 {
        return Err(Error::UndefinedMetric(format!(
            "needs both classes, got {targets} targets and {outliers} outliers"
        )));
    }
    Ok((targets, outliers))
}

/// Probability that a random target scores below a random outlier, ties
/// counted half.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let (targets, outliers) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // mid-ranks, 1-based
    let mut rank_sum_outliers = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end) as f64 / 2.0 + 1.0;
        rank_sum_outliers += mid * order[start..=end].iter().filter(|&&i| labels[i].is_outlier()).count() as f64;
        start = end + 1;
    }
    let o = outliers as f64;
    let u = rank_sum_outliers - o * (o + 1.0) / 2.0;
    Ok(u / (o * targets as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Outlier-detection precision/recall at every distinct score threshold
/// (flag `score >= t`), from the highest threshold down. A leading point at
/// recall 0 carries the precision of the single top-ranked example.
pub fn precision_recall(scores: &[f64], labels: &[Label]) -> Result<Vec<PrPoint>> {
    let (_, outliers) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let first = if labels[order[0]].is_outlier() { 1.0 } else { 0.0 };
    let mut curve = vec![PrPoint {
        recall: 0.0,
        precision: first,
    }];
    let (mut flagged, mut hits) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            flagged += 1;
            hits += usize::from(labels[order[k]].is_outlier());
            k += 1;
        }
        curve.push(PrPoint {
            recall: hits as f64 / outliers as f64,
            precision: hits as f64 / flagged as f64,
        });
    }
    Ok(curve)
}

/// Outliers scoring strictly above every target, i.e. flagged before the
/// first false alarm.
pub fn detections_before_false_alarm(scores: &[f64], labels: &[Label]) -> Result<usize> {
    check_inputs(scores, labels)?;
    let worst_target = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !l.is_outlier())
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| l.is_outlier() && **s > worst_target)
        .count())
}

/// Fraction of correct accept/reject decisions (`score <= 0` accepts).
pub fn accuracy(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::arg("accuracy needs equally many nonempty scores and labels"));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| (**s > 0.0) == l.is_outlier())
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankClass {
    Target,
    Similar,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankReport {
    /// The best-accepted example is a target.
    pub win: bool,
    pub rank_first_target: usize,
    pub rank_first_similar: Option<usize>,
}

/// 1-based ranks of the first target and first similar example when
/// sorting by acceptance, ties broken by position.
pub fn rank_metrics(scores: &[f64], classes: &[RankClass]) -> Result<RankReport> {
    if scores.len() != classes.len() {
        return Err(Error::arg("scores and classes differ in length"));
    }
    if scores.is_empty() {
        return Err(Error::arg("empty test set"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let rank_of = |c: RankClass| order.iter().position(|&i| classes[i] == c).map(|p| p + 1);
    let rank_first_target =
        rank_of(RankClass::Target).ok_or_else(|| Error::UndefinedMetric("no target in the test set".into()))?;
    Ok(RankReport {
        win: rank_first_target == 1,
        rank_first_target,
        rank_first_similar: rank_of(RankClass::Similar),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub n_outliers: usize,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub detections_before_false_alarm: Option<usize>,
    pub pr_curve: Vec<PrPoint>,
    pub rank: Option<RankReport>,
}

impl EvalReport {
    /// Everything computable from the given scores. Metrics that need both
    /// classes are left empty when a class is missing.
    pub fn from_scores(scores: &[f64], labels: Option<&[Label]>, classes: Option<&[RankClass]>) -> Result<Self> {
        let (accuracy, auc_v, det, pr) = match labels {
            Some(l) => (
                Some(accuracy(scores, l)?),
                defined(auc(scores, l))?,
                defined(detections_before_false_alarm(scores, l))?,
                defined(precision_recall(scores, l))?.unwrap_or_default(),
            ),
            None => (None, None, None, Vec::new()),
        };
        let rank = match classes {
            Some(c) => defined(rank_metrics(scores, c))?,
            None => None,
        };
        Ok(Self {
            n: scores.len(),
            n_outliers: labels.map_or(0, |l| l.iter().filter(|x| x.is_outlier()).count()),
            accuracy,
            auc: auc_v,
            detections_before_false_alarm: det,
            pr_curve: pr,
            rank,
        })
    }

    pub fn evaluate(model: &OneClassModel, test: &SampleMatrix, classes: Option<&[RankClass]>) -> Result<Self> {
        let scores = model.score(test)?;
        Self::from_scores(&scores, test.labels(), classes)
    }

    /// One-row summary CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "n,n_outliers,accuracy,auc,detections_before_false_alarm,win,rank_first_target,rank_first_similar"
        )?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            self.n,
            self.n_outliers,
            opt(self.accuracy.map(|v| v.to_string())),
            opt(self.auc.map(|v| v.to_string())),
            opt(self.detections_before_false_alarm.map(|v| v.to_string())),
            opt(self.rank.map(|r| r.win.to_string())),
            opt(self.rank.map(|r| r.rank_first_target.to_string())),
            opt(self.rank.and_then(|r| r.rank_first_similar).map(|v| v.to_string())),
        )?;
        Ok(())
    }
}

/// Two-column `recall,precision` CSV.
pub fn write_pr_csv<W: Write>(curve: &[PrPoint], mut out: W) -> Result<()> {
    writeln!(out, "recall,precision")?;
    for p in curve {
        writeln!(out, "{},{}", p.recall, p.precision)?;
    }
    Ok(())
}

/// Balanced accuracy of `model` on a `resolution x resolution` grid over
/// `[-2, 2]^2`, against the region of `target`: the mean of the accepted
/// fraction inside and the rejected fraction outside.
pub fn balanced_grid_accuracy(model: &OneClassModel, target: &Target2d, resolution: usize) -> Result<f64> {
    if resolution < 2 {
        return Err(Error::arg("grid resolution must be >= 2"));
    }
    let step = 4.0 / (resolution - 1) as f64;
    let mut rows = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            rows.push(vec![-2.0 + i as f64 * step, -2.0 + j as f64 * step]);
        }
    }
    let grid = SampleMatrix::from_rows(&rows, None)?;
    let accepted = model.predict(&grid)?;
    let (mut inside, mut inside_ok, mut outside, mut outside_ok) = (0usize, 0usize, 0usize, 0usize);
    for (p, acc) in rows.iter().zip(accepted) {
        if target.contains([p[0], p[1]]) {
            inside += 1;
            inside_ok += usize::from(acc);
        } else {
            outside += 1;
            outside_ok += usize::from(!acc);
        }
    }
    if inside == 0 || outside == 0 {
        return Err(Error::UndefinedMetric("grid does not cover both regions".into()));
    }
    Ok(0.5 * (inside_ok as f64 / inside as f64 + outside_ok as f64 / outside as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationPolicy {
    /// Fraction of validation targets accepted; ties favour more support
    /// vectors.
    PositiveAcceptance,
    /// AUC on labeled validation data.
    Auc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub methods: Vec<Method>,
    pub c: Vec<f64>,
    /// Used by the slim methods only.
    #[serde(default = "default_lambdas")]
    pub lambda: Vec<f64>,
}

fn default_lambdas() -> Vec<f64> {
    vec![0.0]
}

impl GridSpec {
    /// `C` from 0.05 to 0.5 in steps of 0.05.
    pub fn paper_c_grid() -> Vec<f64> {
        (1..=10).map(|k| k as f64 / 20.0).collect()
    }

    pub fn paper_slim_c_grid() -> Vec<f64> {
        vec![0.01, 0.05, 0.1, 0.2]
    }

    pub fn paper_lambda_grid() -> Vec<f64> {
        vec![0.0, 0.001, 0.01, 0.1, 1.0]
    }

    /// Cells in a fixed order: method, then kernel (single-kernel methods),
    /// then `C`, then `lambda` (slim methods).
    pub fn cells(&self, n_kernels: usize) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &method in &self.methods {
            let kernels: Vec<Option<usize>> = if method.is_multiple_kernel() {
                vec![None]
            } else {
                (0..n_kernels).map(Some).collect()
            };
            let lambdas: &[f64] = if method.is_slim() { &self.lambda } else { &[0.0] };
            for &kernel in &kernels {
                for &c in &self.c {
                    for &lambda in lambdas {
                        out.push(GridCell {
                            index: out.len(),
                            method,
                            kernel,
                            c,
                            lambda,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub method: Method,
    pub kernel: Option<usize>,
    pub c: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: GridCell,
    pub score: Option<f64>,
    pub n_support: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub results: Vec<CellResult>,
    /// Index of the winning cell.
    pub best: Option<usize>,
    pub best_model: Option<OneClassModel>,
}

impl GridOutcome {
    pub fn best_result(&self) -> Option<&CellResult> {
        self.best.map(|i| &self.results[i])
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "cell,method,kernel,c,lambda,score,n_support,best,error")?;
        for r in &self.results {
            let c = &r.cell;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.index,
                c.method,
                c.kernel.map(|k| k.to_string()).unwrap_or_default(),
                c.c,
                c.lambda,
                r.score.map(|v| v.to_string()).unwrap_or_default(),
                r.n_support.map(|v| v.to_string()).unwrap_or_default(),
                self.best == Some(c.index),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            )?;
        }
        Ok(())
    }
}

/// Maps an undefined metric to `None`.
fn defined<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn validation_score(model: &OneClassModel, validation: &SampleMatrix, policy: ValidationPolicy) -> Result<f64> {
    let scores = model.score(validation)?;
    match policy {
        ValidationPolicy::PositiveAcceptance => {
            let positives: Vec<f64> = match validation.labels() {
                Some(l) => scores.iter().zip(l).filter(|(_, l)| !l.is_outlier()).map(|(s, _)| *s).collect(),
                None => scores,
            };
            if positives.is_empty() {
                return Err(Error::UndefinedMetric("validation set has no targets".into()));
            }
            Ok(positives.iter().filter(|&&s| s <= 0.0).count() as f64 / positives.len() as f64)
        }
        ValidationPolicy::Auc => {
            let labels = validation
                .labels()
                .ok_or_else(|| Error::UndefinedMetric("AUC validation needs labels".into()))?;
            auc(&scores, labels)
        }
    }
}

/// Whether `a` beats `b` under `policy`'s ordering.
fn better(a: &CellResult, b: &CellResult, policy: ValidationPolicy) -> bool {
    let (sa, sb) = (a.score.unwrap_or(f64::NEG_INFINITY), b.score.unwrap_or(f64::NEG_INFINITY));
    let mut ord = sa.total_cmp(&sb);
    if policy == ValidationPolicy::PositiveAcceptance {
        ord = ord.then(a.n_support.cmp(&b.n_support));
    }
    let ord = ord
        .then(b.cell.c.total_cmp(&a.cell.c))
        .then(b.cell.lambda.total_cmp(&a.cell.lambda))
        .then(b.cell.index.cmp(&a.cell.index));
    ord == Ordering::Greater
}

/// Trains every cell of `grid` on `dict` and scores it on `validation`.
/// Cell failures are recorded, not propagated.
pub fn grid_search(
    dict: &KernelDictionary,
    validation: &SampleMatrix,
    grid: &GridSpec,
    policy: ValidationPolicy,
    base: &MklConfig,
) -> Result<GridOutcome> {
    let cells = grid.cells(dict.len());
    if cells.is_empty() {
        return Err(Error::arg("grid has no cells"));
    }
    let run = |cell: &GridCell| -> Result<(f64, OneClassModel)> {
        let cfg = MklConfig {
            c: cell.c,
            lambda: cell.lambda,
            ..*base
        };
        let (model, _) = train(cell.method, dict, cell.kernel, &cfg)?;
        let score = validation_score(&model, validation, policy)?;
        Ok((score, model))
    };
    let fitted: Vec<(CellResult, Option<OneClassModel>)> = cells
        .par_iter()
        .map(|cell| match run(cell) {
            Ok((score, model)) => (
                CellResult {
                    cell: *cell,
                    score: Some(score),
                    n_support: Some(model.n_support()),
                    error: None,
                },
                Some(model),
            ),
            Err(e) => (
                CellResult {
                    cell: *cell,
                    score: None,
                    n_support: None,
                    error: Some(e.to_string()),
                },
                None,
            ),
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, (r, _)) in fitted.iter().enumerate() {
        if r.score.is_none() {
            continue;
        }
        if best.is_none_or(|b| better(r, &fitted[b].0, policy)) {
            best = Some(i);
        }
    }
    let mut best_model = None;
    let mut results = Vec::with_capacity(fitted.len());
    for (i, (r, m)) in fitted.into_iter().enumerate() {
        if Some(i) == best {
            best_model = m;
        }
        results.push(r);
    }
    Ok(GridOutcome {
        results,
        best,
        best_model,
    })
}
