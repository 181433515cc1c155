//! SVDD and one-class SVM models: fitting from a dual solution, decision
//! thresholds and outlier scores.
//!
//! Both models are expanded over their support vectors. For SVDD the
//! squared feature-space distance to the center is
//!
//! ```text
//! f(x) = k(x, x) - 2 sum_j a_j k(x_j, x) + sum_jk a_j a_k k(x_j, x_k)
//! ```
//!
//! and the outlier score is `f(x) - R2`. For the one-class SVM the score is
//! `rho - sum_j a_j k(x_j, x)`. Positive scores lie outside the boundary.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::SampleMatrix;
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, Kernel, KernelDictionary, KernelSpec, PrecomputedKernels, SimplexWeights};
use crate::qp::{quadratic_form, AlphaSolution, QpProblem, SmoSolver, SV_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svdd,
    Ocsvm,
}

impl ModelKind {
    /// Inner problem for this model at kernel `k`.
    pub fn problem<'a>(self, k: &'a GramMatrix, c: f64) -> Result<QpProblem<'a>> {
        match self {
            ModelKind::Svdd => QpProblem::svdd(k, c),
            ModelKind::Ocsvm => QpProblem::ocsvm(k, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportVector {
    /// Position in the training set.
    pub index: usize,
    pub id: usize,
    pub alpha: f64,
    /// Empty for purely precomputed dictionaries.
    pub features: Vec<f64>,
}

/// A fitted SVDD or one-class SVM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OneClassModel {
    pub kind: ModelKind,
    /// Method label recorded by the caller (e.g. `slim-mk-svdd`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub c: f64,
    #[serde(default)]
    pub lambda: f64,
    pub weights: SimplexWeights,
    pub kernels: Vec<KernelSpec>,
    pub scales: Vec<f64>,
    /// `R2` for SVDD, `rho` for the one-class SVM.
    pub threshold: f64,
    /// `a' K a` over the training set at the combined kernel.
    pub alpha_k_alpha: f64,
    /// Maximization-form dual objective.
    pub objective: f64,
    pub support: Vec<SupportVector>,
    /// Training positions of the margin support vectors.
    pub margin_support: Vec<usize>,
    pub train_ids: Vec<usize>,
    #[serde(skip)]
    resolved: Option<Vec<Kernel>>,
}

impl PartialEq for OneClassModel {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.method == other.method
            && self.c == other.c
            && self.lambda == other.lambda
            && self.weights == other.weights
            && self.kernels == other.kernels
            && self.scales == other.scales
            && self.threshold == other.threshold
            && self.alpha_k_alpha == other.alpha_k_alpha
            && self.objective == other.objective
            && self.support == other.support
            && self.margin_support == other.margin_support
            && self.train_ids == other.train_ids
    }
}

/// Per-training-example quantities the threshold is derived from.
struct TrainingValues {
    /// `f(x_i)` for SVDD, `sum_j a_j k(x_j, x_i)` for the one-class SVM.
    values: Vec<f64>,
    alpha_k_alpha: f64,
}

fn training_values(kind: ModelKind, k: &GramMatrix, alpha: &[f64]) -> TrainingValues {
    let a = Array1::from(alpha.to_vec());
    let ka = k.values().dot(&a);
    let aka = quadratic_form(k, alpha);
    let values = match kind {
        ModelKind::Svdd => (0..alpha.len()).map(|i| k.diag()[i] - 2.0 * ka[i] + aka).collect(),
        ModelKind::Ocsvm => ka.to_vec(),
    };
    TrainingValues {
        values,
        alpha_k_alpha: aka,
    }
}

/// Threshold from the margin support vectors (mean). Without any, the
/// midpoint of the interval allowed by complementary slackness between
/// non-support vectors (inside) and bounded ones (outside).
fn threshold(kind: ModelKind, sol: &AlphaSolution, values: &[f64]) -> f64 {
    if !sol.margin_sv_indices.is_empty() {
        let s: f64 = sol.margin_sv_indices.iter().map(|&i| values[i]).sum();
        return s / sol.margin_sv_indices.len() as f64;
    }
    let inside = (0..values.len()).filter(|&i| sol.alpha[i] <= SV_THRESHOLD);
    let bounded = (0..values.len()).filter(|&i| sol.is_bounded(i));
    // SVDD: inside has f <= R2 <= f(bounded). One-class SVM: the reverse.
    let (lo, hi) = match kind {
        ModelKind::Svdd => (
            inside.map(|i| values[i]).fold(f64::NEG_INFINITY, f64::max),
            bounded.map(|i| values[i]).fold(f64::INFINITY, f64::min),
        ),
        ModelKind::Ocsvm => (
            bounded.map(|i| values[i]).fold(f64::NEG_INFINITY, f64::max),
            inside.map(|i| values[i]).fold(f64::INFINITY, f64::min),
        ),
    };
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

impl OneClassModel {
    /// Assembles a model from an inner solution at `combined`, the kernel
    /// `dict.combine(d)`.
    pub fn from_solution(
        dict: &KernelDictionary,
        d: SimplexWeights,
        kind: ModelKind,
        combined: &GramMatrix,
        sol: &AlphaSolution,
    ) -> Result<Self> {
        if sol.alpha.len() != dict.n_train() || combined.dim() != dict.n_train() {
            return Err(Error::arg("solution does not match the training set"));
        }
        let tv = training_values(kind, combined, &sol.alpha);
        let threshold = threshold(kind, sol, &tv.values);
        let train = dict.train();
        let support = sol
            .sv_indices
            .iter()
            .map(|&i| SupportVector {
                index: i,
                id: train.ids()[i],
                alpha: sol.alpha[i],
                features: train.row(i).to_vec(),
            })
            .collect();
        Ok(Self {
            kind,
            method: None,
            c: sol.c,
            lambda: 0.0,
            weights: d,
            kernels: dict.specs(),
            scales: dict.scales().to_vec(),
            threshold,
            alpha_k_alpha: tv.alpha_k_alpha,
            objective: sol.objective,
            support,
            margin_support: sol.margin_sv_indices.clone(),
            train_ids: train.ids().to_vec(),
            resolved: Some(dict.kernels().to_vec()),
        })
    }

    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = Some(method.into());
        self
    }

    pub fn n_support(&self) -> usize {
        self.support.len()
    }

    /// Dense dual vector over the training set.
    pub fn alpha_dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.train_ids.len()];
        for sv in &self.support {
            a[sv.index] = sv.alpha;
        }
        a
    }

    /// Resolves precomputed kernel ids after loading a model from disk.
    pub fn attach(&mut self, store: &PrecomputedKernels) -> Result<()> {
        let ks = self
            .kernels
            .iter()
            .map(|s| Kernel::resolve(s, store))
            .collect::<Result<Vec<_>>>()?;
        self.resolved = Some(ks);
        Ok(())
    }

    fn kernels_resolved(&self) -> Result<Vec<Kernel>> {
        match &self.resolved {
            Some(k) => Ok(k.clone()),
            None => self
                .kernels
                .iter()
                .map(Kernel::from_spec)
                .collect::<Result<Vec<_>>>(),
        }
    }

    fn support_matrix(&self) -> Result<SampleMatrix> {
        let dim = self.support.first().map_or(0, |s| s.features.len());
        let flat: Vec<f64> = self.support.iter().flat_map(|s| s.features.iter().copied()).collect();
        let features = Array2::from_shape_vec((self.support.len(), dim), flat)
            .map_err(|e| Error::arg(e.to_string()))?;
        SampleMatrix::with_ids(features, None, self.support.iter().map(|s| s.id).collect())
    }

    /// Outlier scores; positive means outside the boundary.
    pub fn score(&self, x: &SampleMatrix) -> Result<Vec<f64>> {
        let kernels = self.kernels_resolved()?;
        let sv = self.support_matrix()?;
        let feature_based = kernels.iter().any(|k| !matches!(k, Kernel::Precomputed { .. }));
        if feature_based && x.dim() != sv.dim() {
            return Err(Error::arg(format!(
                "test features have dimension {}, model expects {}",
                x.dim(),
                sv.dim()
            )));
        }
        let alpha = Array1::from(self.support.iter().map(|s| s.alpha).collect::<Vec<_>>());
        let mut expansion = Array1::<f64>::zeros(x.len());
        let mut self_k = Array1::<f64>::zeros(x.len());
        for ((kernel, &w), &s) in kernels.iter().zip(self.weights.as_slice()).zip(&self.scales) {
            if w == 0.0 {
                continue;
            }
            let cross = kernel.cross(&sv, x)?;
            expansion.scaled_add(w * s, &alpha.dot(&cross));
            if self.kind == ModelKind::Svdd {
                self_k.scaled_add(w * s, &kernel.self_values(x)?);
            }
        }
        Ok(match self.kind {
            ModelKind::Svdd => (0..x.len())
                .map(|i| self_k[i] - 2.0 * expansion[i] + self.alpha_k_alpha - self.threshold)
                .collect(),
            ModelKind::Ocsvm => expansion.iter().map(|g| self.threshold - g).collect(),
        })
    }

    /// `true` for accepted (inside) examples.
    pub fn predict(&self, x: &SampleMatrix) -> Result<Vec<bool>> {
        Ok(self.score(x)?.into_iter().map(|s| s <= 0.0).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        crate::io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}

/// Fits a model at fixed kernel weights.
pub fn fit(
    dict: &KernelDictionary,
    d: &SimplexWeights,
    c: f64,
    kind: ModelKind,
    solver: &SmoSolver,
) -> Result<OneClassModel> {
    let k = dict.combine(d)?;
    let sol = solver.solve(&kind.problem(&k, c)?, None)?;
    OneClassModel::from_solution(dict, d.clone(), kind, &k, &sol)
}

pub fn fit_svdd(dict: &KernelDictionary, d: &SimplexWeights, c: f64) -> Result<OneClassModel> {
    fit(dict, d, c, ModelKind::Svdd, &SmoSolver::default())
}

pub fn fit_ocsvm(dict: &KernelDictionary, d: &SimplexWeights, c: f64) -> Result<OneClassModel> {
    fit(dict, d, c, ModelKind::Ocsvm, &SmoSolver::default())
}
