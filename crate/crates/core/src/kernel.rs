//! Base kernels, Gram matrices, the kernel dictionary and convex kernel
//! combinations.
//!
//! Feature kernels (RBF, polynomial) are evaluated from example features.
//! Precomputed kernels (e.g. graph kernels) are full matrices over a
//! collection, indexed by example id.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleMatrix;
use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on Gram matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest admissible eigenvalue, relative to the largest.
pub const PSD_FLOOR: f64 = 1e-8;
/// Tolerance on `sum(d) = 1` for kernel weights.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Declarative description of a base kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `exp(-|x - y|^2 / (2 sigma^2))`
    Rbf { sigma: f64 },
    /// `(<x, y> + 1)^degree`
    Polynomial { degree: u32 },
    /// A matrix loaded from a manifest, looked up by example id.
    Precomputed { id: String },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Rbf { sigma } if !(sigma.is_finite() && *sigma > 0.0) => {
                Err(Error::arg(format!("RBF bandwidth must be > 0, got {sigma}")))
            }
            KernelSpec::Polynomial { degree } if *degree < 1 => {
                Err(Error::arg("polynomial degree must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// The RBF bandwidth grid `[0.1, 0.5, 1, 5, 10, 50, 100]`.
    pub fn rbf_grid() -> Vec<KernelSpec> {
        [0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0]
            .into_iter()
            .map(|sigma| KernelSpec::Rbf { sigma })
            .collect()
    }

    /// Polynomial kernels of degree 1 to 4.
    pub fn poly_grid() -> Vec<KernelSpec> {
        (1..=4).map(|degree| KernelSpec::Polynomial { degree }).collect()
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::Rbf { sigma } => write!(f, "rbf:{sigma}"),
            KernelSpec::Polynomial { degree } => write!(f, "poly:{degree}"),
            KernelSpec::Precomputed { id } => write!(f, "pre:{id}"),
        }
    }
}

impl std::str::FromStr for KernelSpec {
    type Err = Error;

    /// Parses `rbf:<sigma>`, `poly:<degree>` or `pre:<id>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::arg(format!("kernel {s:?}: expected kind:arg")))?;
        let spec = match kind {
            "rbf" => KernelSpec::Rbf {
                sigma: arg.parse().map_err(|_| Error::arg(format!("bad bandwidth {arg:?}")))?,
            },
            "poly" => KernelSpec::Polynomial {
                degree: arg.parse().map_err(|_| Error::arg(format!("bad degree {arg:?}")))?,
            },
            "pre" => KernelSpec::Precomputed { id: arg.to_string() },
            other => return Err(Error::arg(format!("unknown kernel kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Square symmetric kernel matrix with a cached diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: Array2<f64>,
    diag: Array1<f64>,
}

impl GramMatrix {
    /// Validates squareness, finiteness and symmetry.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::arg(format!(
                "Gram matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite Gram entry".into()));
        }
        let g = Self::from_symmetric(values);
        if !g.is_symmetric(SYMMETRY_TOL) {
            return Err(Error::arg("Gram matrix is not symmetric"));
        }
        Ok(g)
    }

    pub(crate) fn from_symmetric(values: Array2<f64>) -> Self {
        let diag = values.diag().to_owned();
        Self { values, diag }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn diag(&self) -> &Array1<f64> {
        &self.diag
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn trace(&self) -> f64 {
        self.diag.sum()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let n = self.dim();
        (0..n).all(|i| {
            (i + 1..n).all(|j| (self.values[[i, j]] - self.values[[j, i]]).abs() <= rel_tol * scale)
        })
    }

    /// Smallest and largest eigenvalues.
    pub fn eigen_range(&self) -> (f64, f64) {
        let n = self.dim();
        if n == 0 {
            return (0.0, 0.0);
        }
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| self.values[[i, j]]);
        let eig = nalgebra::SymmetricEigen::new(m).eigenvalues;
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// PSD up to round-off: `lambda_min >= -PSD_FLOOR * lambda_max`.
    pub fn is_psd(&self) -> bool {
        let (lo, hi) = self.eigen_range();
        lo >= -PSD_FLOOR * hi.abs().max(f64::MIN_POSITIVE)
    }

    pub fn add_to_diagonal(&mut self, v: f64) {
        for i in 0..self.dim() {
            self.values[[i, i]] += v;
        }
        self.diag.mapv_inplace(|d| d + v);
    }

    fn scaled(&self, s: f64) -> GramMatrix {
        if s == 1.0 {
            return self.clone();
        }
        Self::from_symmetric(self.values.mapv(|v| v * s))
    }
}

/// Fills a symmetric matrix from its upper triangle, rows in parallel.
pub(crate) fn symmetric_from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| f(i, j)).collect())
        .collect();
    let mut out = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// A resolved kernel, ready to evaluate.
#[derive(Debug, Clone)]
pub enum Kernel {
    Rbf { sigma: f64 },
    Polynomial { degree: u32 },
    Precomputed { id: String, matrix: Arc<GramMatrix> },
}

impl Kernel {
    /// Resolves a feature kernel; precomputed specs need [`Kernel::resolve`].
    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        Self::resolve(spec, &PrecomputedKernels::default())
    }

    pub fn resolve(spec: &KernelSpec, store: &PrecomputedKernels) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            KernelSpec::Rbf { sigma } => Kernel::Rbf { sigma: *sigma },
            KernelSpec::Polynomial { degree } => Kernel::Polynomial { degree: *degree },
            KernelSpec::Precomputed { id } => Kernel::Precomputed {
                id: id.clone(),
                matrix: store
                    .get(id)
                    .ok_or_else(|| Error::arg(format!("no precomputed kernel {id:?} loaded")))?,
            },
        })
    }

    pub fn spec(&self) -> KernelSpec {
        match self {
            Kernel::Rbf { sigma } => KernelSpec::Rbf { sigma: *sigma },
            Kernel::Polynomial { degree } => KernelSpec::Polynomial { degree: *degree },
            Kernel::Precomputed { id, .. } => KernelSpec::Precomputed { id: id.clone() },
        }
    }

    fn eval_features(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        match self {
            Kernel::Rbf { sigma } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * sigma * sigma)).exp()
            }
            Kernel::Polynomial { degree } => (x.dot(&y) + 1.0).powi(*degree as i32),
            Kernel::Precomputed { .. } => unreachable!("precomputed kernels are looked up by id"),
        }
    }

    fn check_ids(matrix: &GramMatrix, x: &SampleMatrix) -> Result<()> {
        match x.ids().iter().find(|&&id| id >= matrix.dim()) {
            Some(id) => Err(Error::arg(format!(
                "example id {id} outside precomputed matrix of size {}",
                matrix.dim()
            ))),
            None => Ok(()),
        }
    }

    /// Gram matrix of `x` with itself.
    pub fn gram(&self, x: &SampleMatrix) -> Result<GramMatrix> {
        if x.is_empty() {
            return Err(Error::arg("cannot build a Gram matrix over zero examples"));
        }
        let values = match self {
            Kernel::Precomputed { matrix, .. } => {
                Self::check_ids(matrix, x)?;
                let ids = x.ids();
                symmetric_from_fn(x.len(), |i, j| matrix.get(ids[i], ids[j]))
            }
            _ => symmetric_from_fn(x.len(), |i, j| self.eval_features(x.row(i), x.row(j))),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("kernel {} produced a non-finite value", self.spec())));
        }
        Ok(GramMatrix::from_symmetric(values))
    }

    /// Rectangular matrix `out[i][j] = k(a_i, b_j)`.
    pub fn cross(&self, a: &SampleMatrix, b: &SampleMatrix) -> Result<Array2<f64>> {
        let out = match self {
            Kernel::Precomputed { matrix, .. } => {
                Self::check_ids(matrix, a)?;
                Self::check_ids(matrix, b)?;
                Array2::from_shape_fn((a.len(), b.len()), |(i, j)| {
                    matrix.get(a.ids()[i], b.ids()[j])
                })
            }
            _ => {
                if a.dim() != b.dim() {
                    return Err(Error::arg(format!(
                        "feature dimension mismatch: {} vs {}",
                        a.dim(),
                        b.dim()
                    )));
                }
                let rows: Vec<f64> = (0..a.len())
                    .into_par_iter()
                    .flat_map_iter(|i| {
                        (0..b.len()).map(move |j| self.eval_features(a.row(i), b.row(j)))
                    })
                    .collect();
                Array2::from_shape_vec((a.len(), b.len()), rows).expect("shape")
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("kernel {} produced a non-finite value", self.spec())));
        }
        Ok(out)
    }

    /// `k(x_i, x_i)` for every row.
    pub fn self_values(&self, x: &SampleMatrix) -> Result<Array1<f64>> {
        match self {
            Kernel::Precomputed { matrix, .. } => {
                Self::check_ids(matrix, x)?;
                Ok(x.ids().iter().map(|&id| matrix.get(id, id)).collect())
            }
            _ => Ok((0..x.len()).map(|i| self.eval_features(x.row(i), x.row(i))).collect()),
        }
    }
}

/// Gram matrix of `x` under a feature kernel described by `spec`.
pub fn gram(spec: &KernelSpec, x: &SampleMatrix) -> Result<GramMatrix> {
    Kernel::from_spec(spec)?.gram(x)
}

/// Rectangular train x test kernel matrix.
pub fn cross_gram(spec: &KernelSpec, train: &SampleMatrix, test: &SampleMatrix) -> Result<Array2<f64>> {
    Kernel::from_spec(spec)?.cross(train, test)
}

/// Kernel weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::arg("kernel weights must be nonempty"));
        }
        if d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg("kernel weights must be finite and nonnegative"));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::arg(format!("kernel weights sum to {s}, not 1")));
        }
        Ok(Self(d))
    }

    pub fn uniform(nk: usize) -> Self {
        Self(vec![1.0 / nk as f64; nk])
    }

    pub fn unit(nk: usize, m: usize) -> Self {
        let mut d = vec![0.0; nk];
        d[m] = 1.0;
        Self(d)
    }

    /// Clamps negatives to zero and rescales to unit sum.
    pub(crate) fn normalized(mut d: Vec<f64>) -> Self {
        for v in d.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let s: f64 = d.iter().sum();
        if s > 0.0 && s != 1.0 {
            for v in d.iter_mut() {
                *v /= s;
            }
        }
        Self(d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;

    fn try_from(d: Vec<f64>) -> Result<Self> {
        Self::new(d)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(d: SimplexWeights) -> Vec<f64> {
        d.0
    }
}

/// An ordered set of base kernels with their Gram matrices over a training
/// set. Gram matrices are stored already multiplied by their scale factor.
#[derive(Debug, Clone)]
pub struct KernelDictionary {
    kernels: Vec<Kernel>,
    grams: Vec<Arc<GramMatrix>>,
    scales: Vec<f64>,
    train: Arc<SampleMatrix>,
}

impl KernelDictionary {
    pub fn build(kernels: Vec<Kernel>, train: SampleMatrix) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::arg("kernel dictionary needs at least one kernel"));
        }
        let grams = kernels
            .iter()
            .map(|k| k.gram(&train).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let scales = vec![1.0; kernels.len()];
        Ok(Self {
            kernels,
            grams,
            scales,
            train: Arc::new(train),
        })
    }

    pub fn from_specs(specs: &[KernelSpec], store: &PrecomputedKernels, train: SampleMatrix) -> Result<Self> {
        let kernels = specs
            .iter()
            .map(|s| Kernel::resolve(s, store))
            .collect::<Result<Vec<_>>>()?;
        Self::build(kernels, train)
    }

    /// Wraps raw Gram matrices over examples `0..n` as precomputed kernels
    /// named `g0, g1, ...`.
    pub fn from_grams(grams: Vec<Array2<f64>>) -> Result<Self> {
        let mut store = PrecomputedKernels::default();
        let mut specs = Vec::with_capacity(grams.len());
        let n = grams.first().map_or(0, |g| g.nrows());
        for (m, g) in grams.into_iter().enumerate() {
            let id = format!("g{m}");
            store.insert(id.clone(), GramMatrix::new(g)?);
            specs.push(KernelSpec::Precomputed { id });
        }
        let train = SampleMatrix::index_only((0..n).collect(), None)?;
        Self::from_specs(&specs, &store, train)
    }

    /// Rescales every Gram matrix to unit trace.
    pub fn with_unit_trace(mut self) -> Result<Self> {
        for m in 0..self.grams.len() {
            let t = self.grams[m].trace();
            if !(t > 0.0) {
                return Err(Error::Numeric(format!("kernel {m} has trace {t}")));
            }
            let s = 1.0 / t;
            self.grams[m] = Arc::new(self.grams[m].scaled(s));
            self.scales[m] *= s;
        }
        Ok(self)
    }

    /// Sub-dictionary sharing the selected Gram matrices.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() || indices.iter().any(|&m| m >= self.len()) {
            return Err(Error::arg("invalid kernel selection"));
        }
        Ok(Self {
            kernels: indices.iter().map(|&m| self.kernels[m].clone()).collect(),
            grams: indices.iter().map(|&m| self.grams[m].clone()).collect(),
            scales: indices.iter().map(|&m| self.scales[m]).collect(),
            train: self.train.clone(),
        })
    }

    /// Number of kernels.
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn specs(&self) -> Vec<KernelSpec> {
        self.kernels.iter().map(Kernel::spec).collect()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn gram(&self, m: usize) -> &GramMatrix {
        &self.grams[m]
    }

    pub fn grams(&self) -> impl Iterator<Item = &GramMatrix> {
        self.grams.iter().map(|g| g.as_ref())
    }

    pub fn train(&self) -> &SampleMatrix {
        &self.train
    }

    /// `sum_m d_m K_m`, skipping zero weights.
    pub fn combine(&self, d: &SimplexWeights) -> Result<GramMatrix> {
        if d.len() != self.len() {
            return Err(Error::arg(format!(
                "{} weights for {} kernels",
                d.len(),
                self.len()
            )));
        }
        let n = self.n_train();
        let mut out = Array2::zeros((n, n));
        for (g, &w) in self.grams.iter().zip(d.as_slice()) {
            if w != 0.0 {
                out.scaled_add(w, g.values());
            }
        }
        Ok(GramMatrix::from_symmetric(out))
    }
}

/// Entrywise convex combination of the dictionary's Gram matrices.
pub fn combine(dict: &KernelDictionary, d: &SimplexWeights) -> Result<GramMatrix> {
    dict.combine(d)
}

/// Precomputed kernel matrices keyed by id.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedKernels {
    matrices: BTreeMap<String, Arc<GramMatrix>>,
}

impl PrecomputedKernels {
    pub fn insert(&mut self, id: String, matrix: GramMatrix) {
        self.matrices.insert(id, Arc::new(matrix));
    }

    pub fn get(&self, id: &str) -> Option<Arc<GramMatrix>> {
        self.matrices.get(id).cloned()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.matrices.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Loads every matrix listed in a manifest. Matrix paths are relative to
    /// the manifest's directory.
    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest = KernelManifest::load(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut store = Self::default();
        for entry in &manifest.matrices {
            let file = base.join(&entry.file);
            let f = std::fs::File::open(&file).map_err(|e| Error::file(&file, e))?;
            let values = read_matrix_text(f)?;
            if values.nrows() != manifest.size {
                return Err(Error::arg(format!(
                    "{}: {} rows, manifest says {}",
                    file.display(),
                    values.nrows(),
                    manifest.size
                )));
            }
            store.insert(entry.id.clone(), GramMatrix::new(values)?);
        }
        Ok(store)
    }
}

/// Lists the matrix files that make up a precomputed kernel collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelManifest {
    /// Number of examples (rows/columns of every matrix).
    pub size: usize,
    pub matrices: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: PathBuf,
    /// Free-form description of how the matrix was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl KernelManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn specs(&self) -> Vec<KernelSpec> {
        self.matrices
            .iter()
            .map(|e| KernelSpec::Precomputed { id: e.id.clone() })
            .collect()
    }
}

/// Reads a whitespace-separated matrix, one row per line. Blank lines and
/// `#` lines are skipped.
pub fn read_matrix_text<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut flat = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let before = flat.len();
        for tok in t.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno as u64 + 1,
                message: format!("{tok:?} is not a number"),
            })?;
            flat.push(v);
        }
        let w = flat.len() - before;
        if *width.get_or_insert(w) != w {
            return Err(Error::Parse {
                line: lineno as u64 + 1,
                message: format!("row has {w} values, expected {}", width.unwrap()),
            });
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse { line: 1, message: "empty matrix file".into() });
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), flat).map_err(|e| Error::arg(e.to_string()))
}

/// Writes a matrix in the format read by [`read_matrix_text`]. Values use
/// the shortest representation that round-trips exactly.
pub fn write_matrix_text<W: Write>(m: &Array2<f64>, mut out: W) -> Result<()> {
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(seed: u64, n: usize, dim: usize) -> SampleMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        SampleMatrix::from_rows(&rows, None).unwrap()
    }

    fn random_psd(seed: u64, n: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        a.dot(&a.t())
    }

    #[test]
    fn rbf_diagonal_is_one() {
        let x = random_points(1, 6, 3);
        for sigma in [0.1, 1.0, 100.0] {
            let g = gram(&KernelSpec::Rbf { sigma }, &x).unwrap();
            assert!(g.diag().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn polynomial_orthogonal_points() {
        let x = SampleMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], None).unwrap();
        let g = gram(&KernelSpec::Polynomial { degree: 1 }, &x).unwrap();
        assert_eq!(g.get(0, 1), 1.0);
        assert_eq!(g.get(0, 0), 2.0);
    }

    #[test]
    fn rbf_matches_double_loop() {
        let x = random_points(2, 5, 2);
        let g = gram(&KernelSpec::Rbf { sigma: 1.0 }, &x).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut sq = 0.0;
                for k in 0..2 {
                    let diff = x.features()[[i, k]] - x.features()[[j, k]];
                    sq += diff * diff;
                }
                let want = (-sq / 2.0).exp();
                assert!((g.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_rejects_empty_and_overflow() {
        let empty = SampleMatrix::from_rows(&[], None).unwrap();
        assert!(gram(&KernelSpec::Rbf { sigma: 1.0 }, &empty).is_err());
        let huge = SampleMatrix::from_rows(&[vec![1e200], vec![1e200]], None).unwrap();
        assert!(matches!(
            gram(&KernelSpec::Polynomial { degree: 4 }, &huge),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn spec_validation_and_parsing() {
        assert!(KernelSpec::Rbf { sigma: 0.0 }.validate().is_err());
        assert!(KernelSpec::Polynomial { degree: 0 }.validate().is_err());
        assert_eq!("rbf:0.5".parse::<KernelSpec>().unwrap(), KernelSpec::Rbf { sigma: 0.5 });
        assert_eq!("poly:3".parse::<KernelSpec>().unwrap(), KernelSpec::Polynomial { degree: 3 });
        assert!("rbf:-1".parse::<KernelSpec>().is_err());
        assert!("lin:1".parse::<KernelSpec>().is_err());
        let json = serde_json::to_string(&KernelSpec::Rbf { sigma: 2.0 }).unwrap();
        assert_eq!(json, r#"{"kind":"rbf","sigma":2.0}"#);
    }

    #[test]
    fn combine_unit_vector_is_exact() {
        let x = random_points(3, 7, 2);
        let kernels = vec![Kernel::Rbf { sigma: 0.5 }, Kernel::Polynomial { degree: 2 }];
        let dict = KernelDictionary::build(kernels, x).unwrap();
        let c = dict.combine(&SimplexWeights::unit(2, 0)).unwrap();
        assert_eq!(c, *dict.gram(0));
    }

    #[test]
    fn combine_identical_grams() {
        let k = random_psd(4, 5);
        let dict = KernelDictionary::from_grams(vec![k.clone(), k.clone()]).unwrap();
        let c = dict.combine(&SimplexWeights::new(vec![0.3, 0.7]).unwrap()).unwrap();
        for (a, b) in c.values().iter().zip(k.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn combine_matches_weighted_sum() {
        let grams: Vec<_> = (0..3).map(|s| random_psd(10 + s, 6)).collect();
        let dict = KernelDictionary::from_grams(grams.clone()).unwrap();
        let w = [0.2, 0.3, 0.5];
        let c = dict.combine(&SimplexWeights::new(w.to_vec()).unwrap()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = w[0] * grams[0][[i, j]] + w[1] * grams[1][[i, j]] + w[2] * grams[2][[i, j]];
                assert!((c.get(i, j) - want).abs() < 1e-12);
            }
        }
        assert!(c.is_psd());
    }

    #[test]
    fn combine_dimension_mismatch() {
        let dict = KernelDictionary::from_grams(vec![random_psd(1, 3)]).unwrap();
        assert!(dict.combine(&SimplexWeights::uniform(2)).is_err());
    }

    #[test]
    fn cross_gram_identity_row_and_diagonal() {
        let train = random_points(5, 4, 2);
        let test = train.select(&[2, 0]);
        let spec = KernelSpec::Rbf { sigma: 0.7 };
        let g = gram(&spec, &train).unwrap();
        let c = cross_gram(&spec, &train, &test).unwrap();
        for i in 0..4 {
            assert_eq!(c[[i, 0]], g.get(i, 2));
        }
        assert_eq!(c[[2, 0]], 1.0);
        let own = cross_gram(&spec, &train, &train).unwrap();
        assert!(own.diag().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cross_gram_matches_oracle() {
        let train = random_points(6, 5, 3);
        let test = random_points(7, 3, 3);
        let c = cross_gram(&KernelSpec::Polynomial { degree: 3 }, &train, &test).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| train.features()[[i, k]] * test.features()[[j, k]]).sum();
                assert!((c[[i, j]] - (dot + 1.0).powi(3)).abs() < 1e-12 * (dot + 1.0).powi(3).abs().max(1.0));
            }
        }
    }

    #[test]
    fn cross_gram_dimension_mismatch() {
        let a = random_points(1, 3, 2);
        let b = random_points(1, 3, 3);
        assert!(cross_gram(&KernelSpec::Rbf { sigma: 1.0 }, &a, &b).is_err());
    }

    #[test]
    fn non_symmetric_rejected() {
        let mut k = random_psd(2, 3);
        k[[0, 1]] += 1e-3;
        assert!(GramMatrix::new(k).is_err());
    }

    #[test]
    fn unit_trace_scaling() {
        let x = random_points(8, 6, 2);
        let dict = KernelDictionary::build(vec![Kernel::Polynomial { degree: 2 }], x)
            .unwrap()
            .with_unit_trace()
            .unwrap();
        assert!((dict.gram(0).trace() - 1.0).abs() < 1e-12);
        assert!(dict.scales()[0] < 1.0);
    }

    #[test]
    fn matrix_text_roundtrip() {
        let m = random_psd(9, 4);
        let mut buf = Vec::new();
        write_matrix_text(&m, &mut buf).unwrap();
        assert_eq!(read_matrix_text(buf.as_slice()).unwrap(), m);
        assert!(read_matrix_text("1 2\n3\n".as_bytes()).is_err());
    }

    #[test]
    fn simplex_weights_validation() {
        assert!(SimplexWeights::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexWeights::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexWeights::new(vec![]).is_err());
        assert!(serde_json::from_str::<SimplexWeights>("[0.25,0.75]").is_ok());
        assert!(serde_json::from_str::<SimplexWeights>("[0.25,0.25]").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn gram_symmetric_and_psd(seed in 0u64..1000, n in 1usize..12, sigma in 0.05f64..20.0) {
                let x = random_points(seed, n, 2);
                for spec in [KernelSpec::Rbf { sigma }, KernelSpec::Polynomial { degree: 3 }] {
                    let g = gram(&spec, &x).unwrap();
                    prop_assert!(g.is_symmetric(SYMMETRY_TOL));
                    prop_assert!(g.is_psd());
                }
            }

            #[test]
            fn combine_is_linear(seed in 0u64..1000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
                let grams: Vec<_> = (0..2).map(|s| random_psd(seed * 7 + s, 5)).collect();
                let dict = KernelDictionary::from_grams(grams).unwrap();
                let d1 = SimplexWeights::new(vec![a, 1.0 - a]).unwrap();
                let d2 = SimplexWeights::new(vec![b, 1.0 - b]).unwrap();
                let mid = SimplexWeights::new(vec![(a + b) / 2.0, 1.0 - (a + b) / 2.0]).unwrap();
                let sum = dict.combine(&d1).unwrap().into_values() + dict.combine(&d2).unwrap().into_values();
                let half = dict.combine(&mid).unwrap();
                for (s, h) in sum.iter().zip(half.values()) {
                    prop_assert!((s / 2.0 - h).abs() < 1e-10 * h.abs().max(1.0));
                }
                prop_assert!(half.is_psd());
            }
        }
    }
}
