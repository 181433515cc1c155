//! Reduced-gradient descent over simplex kernel weights (SimpleMKL) for SVDD
//! and the one-class SVM, including the slim variant that rewards support
//! vector count.
//!
//! For fixed weights `d` the inner dual is solved at `K(d) = sum_m d_m K_m`.
//! With `a*` its solution and `g_m(a) = per-kernel dual objective`,
//!
//! ```text
//! SVDD:    g_m(a) = sum_i a_i K_m[i,i] - a' K_m a
//! OC-SVM:  g_m(a) = -a' K_m a / 2
//! J(d)     = sum_m d_m g_m(a*),    dJ/dd_m = g_m(a*)
//! gap(d)   = J(d) - min_m g_m(a*)
//! ```
//!
//! The gap is the distance between `J(d)` and the lower bound given by the
//! multi-kernel dual; it vanishes exactly when all kernels with positive
//! weight share the smallest partial derivative.
//!
//! The slim variant minimizes `J(d) - lambda * card(a*)`. Descent directions
//! still come from the gradient of `J`; the penalty only enters the line
//! search acceptance test, and the gap test uses `J` alone.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, KernelDictionary, SimplexWeights};
use crate::one_class::{ModelKind, OneClassModel};
use crate::qp::{quadratic_form, AlphaSolution, SmoSolver, DEFAULT_KKT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    /// Step multiplier after a rejected probe.
    pub shrink: f64,
    pub max_probes: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            max_probes: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MklConfig {
    pub c: f64,
    /// Slim weight; 0 gives plain MK-SVDD / MK-OCSVM.
    pub lambda: f64,
    /// Stop when `gap <= gap_tol * |J|`.
    pub gap_tol: f64,
    pub max_outer_iters: usize,
    pub line_search: LineSearch,
    /// KKT tolerance of every inner solve.
    pub kkt_tol: f64,
}

impl Default for MklConfig {
    fn default() -> Self {
        Self {
            c: 0.1,
            lambda: 0.0,
            gap_tol: 1e-4,
            max_outer_iters: 500,
            line_search: LineSearch::default(),
            kkt_tol: DEFAULT_KKT_TOL,
        }
    }
}

impl MklConfig {
    pub fn new(c: f64, lambda: f64) -> Self {
        Self {
            c,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::arg(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::arg(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.gap_tol > 0.0) {
            return Err(Error::arg("gap_tol must be > 0"));
        }
        if !(self.line_search.shrink > 0.0 && self.line_search.shrink < 1.0) {
            return Err(Error::arg("line-search shrink factor must lie in (0, 1)"));
        }
        if self.line_search.max_probes == 0 {
            return Err(Error::arg("line search needs at least one probe"));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::arg("kkt_tol must be > 0"));
        }
        Ok(())
    }

    fn solver(&self) -> SmoSolver {
        SmoSolver::with_tol(self.kkt_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MklIteration {
    pub iteration: usize,
    /// `J(d)` without the slim penalty.
    pub objective: f64,
    /// `J(d) - lambda * card`.
    pub penalized: f64,
    pub gap: f64,
    pub card: usize,
    /// Step length that produced this iterate (0 for the starting point).
    pub step: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Duality gap below tolerance.
    Converged,
    /// Reduced gradient is zero.
    Stationary,
    /// No line-search probe improved the objective.
    NoImprovingStep,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MklTrace {
    pub iterations: Vec<MklIteration>,
    pub stop: StopReason,
    pub warnings: Vec<String>,
    pub inner_solves: usize,
}

impl MklTrace {
    pub fn converged(&self) -> bool {
        matches!(self.stop, StopReason::Converged | StopReason::Stationary)
    }

    pub fn last(&self) -> &MklIteration {
        self.iterations.last().expect("trace has the starting point")
    }

    /// `iteration,J,penalized,gap,card,step,d0,d1,...`
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let nk = self.iterations.first().map_or(0, |it| it.weights.len());
        let mut header = vec!["iteration", "J", "penalized", "gap", "card", "step"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend((0..nk).map(|m| format!("d{m}")));
        writeln!(out, "{}", header.join(","))?;
        for it in &self.iterations {
            let mut row = vec![
                it.iteration.to_string(),
                it.objective.to_string(),
                it.penalized.to_string(),
                it.gap.to_string(),
                it.card.to_string(),
                it.step.to_string(),
            ];
            row.extend(it.weights.iter().map(|w| w.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Per-kernel dual objectives `g_m(alpha)`, i.e. the gradient of `J`.
pub fn gradient_j(dict: &KernelDictionary, alpha: &[f64], kind: ModelKind) -> Result<Vec<f64>> {
    if alpha.len() != dict.n_train() {
        return Err(Error::arg(format!(
            "alpha has length {}, dictionary has {} examples",
            alpha.len(),
            dict.n_train()
        )));
    }
    Ok(dict
        .grams()
        .map(|k| per_kernel_objective(k, alpha, kind))
        .collect())
}

fn per_kernel_objective(k: &GramMatrix, alpha: &[f64], kind: ModelKind) -> f64 {
    let quad = quadratic_form(k, alpha);
    match kind {
        ModelKind::Svdd => {
            let lin: f64 = alpha.iter().zip(k.diag()).map(|(a, d)| a * d).sum();
            lin - quad
        }
        ModelKind::Ocsvm => -0.5 * quad,
    }
}

/// `J(d)` given per-kernel objectives.
fn weighted(d: &SimplexWeights, grad: &[f64]) -> f64 {
    d.as_slice().iter().zip(grad).map(|(w, g)| w * g).sum()
}

/// `J(d)` and the inner solution at `d`, from a cold start.
pub fn objective_j(
    dict: &KernelDictionary,
    d: &SimplexWeights,
    c: f64,
    kind: ModelKind,
) -> Result<(f64, AlphaSolution)> {
    let e = evaluate(dict, d, c, kind, &SmoSolver::default(), None)?;
    Ok((e.j, e.solution))
}

/// `J(d) - min_m g_m(alpha)`; nonnegative up to solver accuracy and zero at
/// the multi-kernel optimum.
pub fn duality_gap(
    dict: &KernelDictionary,
    d: &SimplexWeights,
    alpha: &[f64],
    j: f64,
    kind: ModelKind,
) -> Result<f64> {
    if d.len() != dict.len() {
        return Err(Error::arg("weight count does not match dictionary"));
    }
    let grad = gradient_j(dict, alpha, kind)?;
    Ok(gap_from(j, &grad))
}

fn gap_from(j: f64, grad: &[f64]) -> f64 {
    j - grad.iter().copied().fold(f64::INFINITY, f64::min)
}

/// One inner solve with everything the outer loop needs.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub weights: SimplexWeights,
    pub j: f64,
    pub grad: Vec<f64>,
    pub solution: AlphaSolution,
    pub combined: GramMatrix,
    /// Set when the inner solver hit its cap and its best iterate was used.
    pub warning: Option<String>,
}

impl Evaluation {
    fn penalized(&self, lambda: f64) -> f64 {
        self.j - lambda * self.solution.card() as f64
    }
}

pub fn evaluate(
    dict: &KernelDictionary,
    d: &SimplexWeights,
    c: f64,
    kind: ModelKind,
    solver: &SmoSolver,
    warm_start: Option<&[f64]>,
) -> Result<Evaluation> {
    let combined = dict.combine(d)?;
    let problem = kind.problem(&combined, c)?;
    let (solution, warning) = match solver.solve(&problem, warm_start) {
        Ok(s) => (s, None),
        Err(Error::NotConverged { best, iterations, violation }) => (
            *best,
            Some(format!(
                "inner solve stopped after {iterations} iterations (violation {violation:.3e})"
            )),
        ),
        Err(e) => return Err(e),
    };
    let grad = gradient_j(dict, &solution.alpha, kind)?;
    let j = weighted(d, &grad);
    Ok(Evaluation {
        weights: d.clone(),
        j,
        grad,
        solution,
        combined,
        warning,
    })
}

/// Reduced gradient descent direction. The pivot is the largest weight
/// (lowest index on ties); coordinates at zero whose derivative exceeds the
/// pivot's stay put.
pub fn reduced_direction(d: &[f64], grad: &[f64]) -> Vec<f64> {
    let mut pivot = 0;
    for (m, &w) in d.iter().enumerate() {
        if w > d[pivot] {
            pivot = m;
        }
    }
    let mut dir = vec![0.0; d.len()];
    let mut total = 0.0;
    for m in 0..d.len() {
        if m == pivot {
            continue;
        }
        let diff = grad[m] - grad[pivot];
        if d[m] == 0.0 && diff > 0.0 {
            continue;
        }
        dir[m] = -diff;
        total += dir[m];
    }
    dir[pivot] = -total;
    dir
}

/// Largest step keeping `d + step * dir` nonnegative, or `None` when no
/// coordinate decreases.
fn max_step(d: &[f64], dir: &[f64]) -> Option<f64> {
    d.iter()
        .zip(dir)
        .filter(|(_, &v)| v < 0.0)
        .map(|(&w, &v)| -w / v)
        .min_by(|a, b| a.total_cmp(b))
}

fn take_step(d: &[f64], dir: &[f64], step: f64) -> SimplexWeights {
    let next = d
        .iter()
        .zip(dir)
        .map(|(&w, &v)| {
            if v < 0.0 && -w / v <= step {
                0.0
            } else {
                w + step * v
            }
        })
        .collect();
    SimplexWeights::normalized(next)
}

/// Runs the outer loop and assembles the final model at the last accepted
/// weights.
pub fn fit_mkl(dict: &KernelDictionary, config: &MklConfig, kind: ModelKind) -> Result<(OneClassModel, MklTrace)> {
    config.validate()?;
    let solver = config.solver();
    let lambda = config.lambda;
    let mut warnings = Vec::new();
    let mut inner_solves = 1;

    let mut current = evaluate(dict, &SimplexWeights::uniform(dict.len()), config.c, kind, &solver, None)?;
    warnings.extend(current.warning.take());
    let mut iterations = Vec::new();
    let mut last_step = 0.0;

    let stop = loop {
        let gap = gap_from(current.j, &current.grad);
        iterations.push(MklIteration {
            iteration: iterations.len(),
            objective: current.j,
            penalized: current.penalized(lambda),
            gap,
            card: current.solution.card(),
            step: last_step,
            weights: current.weights.as_slice().to_vec(),
        });
        if gap <= config.gap_tol * current.j.abs() {
            break StopReason::Converged;
        }
        if iterations.len() > config.max_outer_iters {
            warnings.push(format!(
                "outer loop stopped at the iteration cap ({}) with gap {gap:.3e}",
                config.max_outer_iters
            ));
            break StopReason::IterationCap;
        }

        let d = current.weights.as_slice().to_vec();
        let dir = reduced_direction(&d, &current.grad);
        let Some(mut step) = max_step(&d, &dir).filter(|s| *s > 0.0) else {
            break StopReason::Stationary;
        };

        let target = current.penalized(lambda);
        let mut accepted = None;
        for _ in 0..config.line_search.max_probes {
            let trial = take_step(&d, &dir, step);
            let mut e = evaluate(dict, &trial, config.c, kind, &solver, Some(&current.solution.alpha))?;
            inner_solves += 1;
            if e.penalized(lambda) < target {
                warnings.extend(e.warning.take());
                accepted = Some(e);
                break;
            }
            step *= config.line_search.shrink;
        }
        match accepted {
            Some(e) => {
                current = e;
                last_step = step;
            }
            None => break StopReason::NoImprovingStep,
        }
    };

    let mut model = OneClassModel::from_solution(
        dict,
        current.weights.clone(),
        kind,
        &current.combined,
        &current.solution,
    )?;
    model.lambda = lambda;
    Ok((
        model,
        MklTrace {
            iterations,
            stop,
            warnings,
            inner_solves,
        },
    ))
}

/// The six one-class methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "svdd")]
    Svdd,
    #[serde(rename = "ocsvm")]
    Ocsvm,
    #[serde(rename = "mk-svdd")]
    MkSvdd,
    #[serde(rename = "mk-ocsvm")]
    MkOcsvm,
    #[serde(rename = "slim-mk-svdd")]
    SlimMkSvdd,
    #[serde(rename = "slim-mk-ocsvm")]
    SlimMkOcsvm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Svdd,
        Method::Ocsvm,
        Method::MkSvdd,
        Method::MkOcsvm,
        Method::SlimMkSvdd,
        Method::SlimMkOcsvm,
    ];

    pub fn kind(self) -> ModelKind {
        match self {
            Method::Svdd | Method::MkSvdd | Method::SlimMkSvdd => ModelKind::Svdd,
            Method::Ocsvm | Method::MkOcsvm | Method::SlimMkOcsvm => ModelKind::Ocsvm,
        }
    }

    pub fn is_multiple_kernel(self) -> bool {
        !matches!(self, Method::Svdd | Method::Ocsvm)
    }

    pub fn is_slim(self) -> bool {
        matches!(self, Method::SlimMkSvdd | Method::SlimMkOcsvm)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Svdd => "svdd",
            Method::Ocsvm => "ocsvm",
            Method::MkSvdd => "mk-svdd",
            Method::MkOcsvm => "mk-ocsvm",
            Method::SlimMkSvdd => "slim-mk-svdd",
            Method::SlimMkOcsvm => "slim-mk-ocsvm",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown method {s:?}")))
    }
}

/// Fits `method`. Single-kernel methods use dictionary entry `kernel`
/// (required); multiple-kernel methods ignore it. `lambda` is only honoured
/// by the slim variants.
pub fn train(
    method: Method,
    dict: &KernelDictionary,
    kernel: Option<usize>,
    base: &MklConfig,
) -> Result<(OneClassModel, Option<MklTrace>)> {
    let mut cfg = *base;
    if !method.is_slim() {
        cfg.lambda = 0.0;
    }
    if method.is_multiple_kernel() {
        let (model, trace) = fit_mkl(dict, &cfg, method.kind())?;
        return Ok((model.with_method(method.name()), Some(trace)));
    }
    let m = kernel.ok_or_else(|| Error::arg(format!("{method} needs a kernel index")))?;
    let single = dict.select(&[m])?;
    let model = crate::one_class::fit(&single, &SimplexWeights::uniform(1), cfg.c, method.kind(), &cfg.solver())?;
    Ok((model.with_method(method.name()), None))
}
