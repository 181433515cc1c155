//! Bag-of-paths graph kernel over vertex- and edge-labeled graphs.
//!
//! Each graph is summarized by a bag of random walks. Two walks of equal
//! length `L` are compared through
//!
//! ```text
//! d_L(h, h') = k_v(v_1, v'_1) * prod_{i=2..L} k_e(e_{i-1,i}, e'_{i-1,i}) * k_v(v_i, v'_i)
//! k(h, h')   = exp(-d_L^2 / (2 sigma^2))
//! ```
//!
//! with RBF kernels `k_v`, `k_e` on label vectors, and walks of different
//! lengths have similarity 0. The graph kernel is the mean of `k(h, h')`
//! over the cross product of the two bags.
//!
//! `d_L` as written is a similarity, not a distance. [`PathDistance::Complement`]
//! uses `1 - d_L` instead; it is not the default.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{symmetric_from_fn, write_matrix_text, GramMatrix, KernelManifest, ManifestEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    #[serde(default)]
    pub label: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawGraph {
    vertices: Vec<Vec<f64>>,
    #[serde(default)]
    edges: Vec<Edge>,
}

/// Undirected graph with a real label vector on every vertex and edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct LabeledGraph {
    vertices: Vec<Vec<f64>>,
    edges: Vec<Edge>,
    /// `(neighbor, edge index)` per vertex.
    #[serde(skip)]
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl TryFrom<RawGraph> for LabeledGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        LabeledGraph::new(raw.vertices, raw.edges)
    }
}

impl LabeledGraph {
    pub fn new(vertices: Vec<Vec<f64>>, edges: Vec<Edge>) -> Result<Self> {
        let n = vertices.len();
        if let Some(first) = vertices.first() {
            if let Some(v) = vertices.iter().position(|v| v.len() != first.len()) {
                return Err(Error::arg(format!("vertex {v} label has a different dimension")));
            }
        }
        if let Some(first) = edges.first() {
            if let Some(e) = edges.iter().position(|e| e.label.len() != first.label.len()) {
                return Err(Error::arg(format!("edge {e} label has a different dimension")));
            }
        }
        let all_labels = vertices.iter().flatten().chain(edges.iter().flat_map(|e| &e.label));
        if all_labels.clone().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("graph labels must be finite".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            if e.source >= n || e.target >= n {
                return Err(Error::arg(format!(
                    "edge {k} ({}, {}) references a vertex outside 0..{n}",
                    e.source, e.target
                )));
            }
            adjacency[e.source].push((e.target, k));
            if e.source != e.target {
                adjacency[e.target].push((e.source, k));
            }
        }
        Ok(Self {
            vertices,
            edges,
            adjacency,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn vertex_label_dim(&self) -> Option<usize> {
        self.vertices.first().map(Vec::len)
    }

    pub fn edge_label_dim(&self) -> Option<usize> {
        self.edges.first().map(|e| e.label.len())
    }

    /// Edge index connecting `a` and `b`, if any.
    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency.get(a)?.iter().find(|(n, _)| *n == b).map(|&(_, k)| k)
    }
}

/// One walk: `vertices.len() == edges.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBag {
    pub paths: Vec<Path>,
}

impl PathBag {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathDistance {
    /// `d_L` is the label-kernel product.
    #[default]
    Product,
    /// `d_L = 1 - product`, so identical walks are maximally similar.
    Complement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathKernelConfig {
    pub sigma: f64,
    pub vertex_sigma: f64,
    pub edge_sigma: f64,
    pub max_length: usize,
    pub bag_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub distance: PathDistance,
}

impl PathKernelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma", self.sigma),
            ("vertex_sigma", self.vertex_sigma),
            ("edge_sigma", self.edge_sigma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::arg(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.max_length == 0 {
            return Err(Error::arg("max_length must be >= 1"));
        }
        if self.bag_size == 0 {
            return Err(Error::arg("bag_size must be >= 1"));
        }
        Ok(())
    }

    /// Every combination of the given grids, lengths outermost.
    pub fn grid(
        max_lengths: &[usize],
        sigmas: &[f64],
        vertex_sigmas: &[f64],
        edge_sigmas: &[f64],
        bag_size: usize,
        seed: u64,
    ) -> Vec<Self> {
        let mut out = Vec::new();
        for &max_length in max_lengths {
            for &sigma in sigmas {
                for &vertex_sigma in vertex_sigmas {
                    for &edge_sigma in edge_sigmas {
                        out.push(Self {
                            sigma,
                            vertex_sigma,
                            edge_sigma,
                            max_length,
                            bag_size,
                            seed,
                            distance: PathDistance::Product,
                        });
                    }
                }
            }
        }
        out
    }

    fn id(&self, function: &str) -> String {
        let mut id = format!(
            "{function}_L{}_s{}_v{}_e{}",
            self.max_length, self.sigma, self.vertex_sigma, self.edge_sigma
        );
        if self.distance == PathDistance::Complement {
            id.push_str("_complement");
        }
        id
    }
}

/// Grid of path kernel settings, as read by the `graph-gram` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathKernelGrid {
    pub max_lengths: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub vertex_sigmas: Vec<f64>,
    pub edge_sigmas: Vec<f64>,
    pub bag_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub distance: PathDistance,
}

impl PathKernelGrid {
    pub fn configs(&self) -> Vec<PathKernelConfig> {
        let mut out = PathKernelConfig::grid(
            &self.max_lengths,
            &self.sigmas,
            &self.vertex_sigmas,
            &self.edge_sigmas,
            self.bag_size,
            self.seed,
        );
        for c in &mut out {
            c.distance = self.distance;
        }
        out
    }
}

/// Samples `bag_size` walks. Each walk has a length drawn uniformly from
/// `1..=max_length`, a uniform start vertex and uniform neighbor steps; a
/// walk that reaches a vertex without neighbors stops there.
pub fn sample_paths(graph: &LabeledGraph, config: &PathKernelConfig) -> Result<PathBag> {
    config.validate()?;
    let n = graph.n_vertices();
    if n == 0 {
        return Err(Error::arg("cannot sample paths from an empty graph"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let paths = (0..config.bag_size)
        .map(|_| {
            let len = rng.random_range(1..=config.max_length);
            let mut v = rng.random_range(0..n);
            let mut path = Path {
                vertices: vec![v],
                edges: Vec::new(),
            };
            while path.len() < len {
                let nb = graph.neighbors(v);
                if nb.is_empty() {
                    break;
                }
                let (next, e) = nb[rng.random_range(0..nb.len())];
                path.vertices.push(next);
                path.edges.push(e);
                v = next;
            }
            path
        })
        .collect();
    Ok(PathBag { paths })
}

fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-sq / (2.0 * sigma * sigma)).exp()
}

fn check_compatible(ga: &LabeledGraph, gb: &LabeledGraph) -> Result<()> {
    if let (Some(a), Some(b)) = (ga.vertex_label_dim(), gb.vertex_label_dim()) {
        if a != b {
            return Err(Error::arg(format!("vertex label dimensions differ: {a} vs {b}")));
        }
    }
    if let (Some(a), Some(b)) = (ga.edge_label_dim(), gb.edge_label_dim()) {
        if a != b {
            return Err(Error::arg(format!("edge label dimensions differ: {a} vs {b}")));
        }
    }
    Ok(())
}

fn similarity_unchecked(
    h: &Path,
    ga: &LabeledGraph,
    hp: &Path,
    gb: &LabeledGraph,
    config: &PathKernelConfig,
) -> f64 {
    if h.len() != hp.len() {
        return 0.0;
    }
    let vs = config.vertex_sigma;
    let mut d = rbf(&ga.vertices[h.vertices[0]], &gb.vertices[hp.vertices[0]], vs);
    for i in 1..h.len() {
        let ea = &ga.edges[h.edges[i - 1]].label;
        let eb = &gb.edges[hp.edges[i - 1]].label;
        d *= rbf(ea, eb, config.edge_sigma);
        d *= rbf(&ga.vertices[h.vertices[i]], &gb.vertices[hp.vertices[i]], vs);
    }
    let dist = match config.distance {
        PathDistance::Product => d,
        PathDistance::Complement => 1.0 - d,
    };
    (-dist * dist / (2.0 * config.sigma * config.sigma)).exp()
}

/// Similarity of walk `h` in `ga` and walk `hp` in `gb`.
pub fn path_similarity(
    h: &Path,
    ga: &LabeledGraph,
    hp: &Path,
    gb: &LabeledGraph,
    config: &PathKernelConfig,
) -> Result<f64> {
    check_compatible(ga, gb)?;
    for (p, g) in [(h, ga), (hp, gb)] {
        if p.is_empty()
            || p.edges.len() + 1 != p.len()
            || p.vertices.iter().any(|&v| v >= g.n_vertices())
            || p.edges.iter().any(|&e| e >= g.edges.len())
        {
            return Err(Error::arg("path does not belong to its graph"));
        }
    }
    Ok(similarity_unchecked(h, ga, hp, gb, config))
}

fn kernel_unchecked(
    bi: &PathBag,
    gi: &LabeledGraph,
    bj: &PathBag,
    gj: &LabeledGraph,
    config: &PathKernelConfig,
) -> f64 {
    let mut total = 0.0;
    for h in &bi.paths {
        for hp in &bj.paths {
            total += similarity_unchecked(h, gi, hp, gj, config);
        }
    }
    total / (bi.len() * bj.len()) as f64
}

/// Mean path similarity over the cross product of two bags.
pub fn graph_kernel_value(
    bag_i: &PathBag,
    gi: &LabeledGraph,
    bag_j: &PathBag,
    gj: &LabeledGraph,
    config: &PathKernelConfig,
) -> Result<f64> {
    if bag_i.is_empty() || bag_j.is_empty() {
        return Err(Error::arg("path bags must be nonempty"));
    }
    check_compatible(gi, gj)?;
    Ok(kernel_unchecked(bag_i, gi, bag_j, gj, config))
}

/// The same kind of graph computed for every object, e.g. one Reeb graph
/// function over a shape collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFunction {
    pub name: String,
    pub graphs: Vec<LabeledGraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphCollection {
    pub functions: Vec<GraphFunction>,
}

impl GraphCollection {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let c: Self = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.functions.first() else {
            return Err(Error::arg("graph collection has no functions"));
        };
        let n = first.graphs.len();
        if n == 0 {
            return Err(Error::arg("graph collection has no graphs"));
        }
        for f in &self.functions {
            if f.graphs.len() != n {
                return Err(Error::arg(format!(
                    "function {:?} has {} graphs, expected {n}",
                    f.name,
                    f.graphs.len()
                )));
            }
            for g in &f.graphs {
                check_compatible(&f.graphs[0], g)
                    .map_err(|e| Error::arg(format!("function {:?}: {e}", f.name)))?;
            }
        }
        Ok(())
    }

    /// Number of objects (rows of every Gram matrix).
    pub fn size(&self) -> usize {
        self.functions.first().map_or(0, |f| f.graphs.len())
    }
}

#[derive(Debug, Clone)]
pub struct GraphGram {
    pub id: String,
    pub function: String,
    pub config: PathKernelConfig,
    pub gram: GramMatrix,
    /// Whether the diagonal jitter was applied.
    pub jittered: bool,
}

/// Bags keyed by everything that affects sampling.
type BagKey = (usize, usize, usize, u64);

/// One Gram matrix per (function, config) pair, function-major. Bags are
/// sampled once per graph and sampling parameters, and shared across
/// bandwidths.
pub fn build_graph_gram(collection: &GraphCollection, configs: &[PathKernelConfig]) -> Result<Vec<GraphGram>> {
    collection.validate()?;
    if configs.is_empty() {
        return Err(Error::arg("no path kernel configurations"));
    }
    for c in configs {
        c.validate()?;
    }
    let mut bags: HashMap<BagKey, Arc<Vec<PathBag>>> = HashMap::new();
    let mut out = Vec::with_capacity(collection.functions.len() * configs.len());
    for (fi, f) in collection.functions.iter().enumerate() {
        for config in configs {
            let key = (fi, config.max_length, config.bag_size, config.seed);
            let fbags = match bags.get(&key) {
                Some(b) => Arc::clone(b),
                None => {
                    let b = Arc::new(
                        f.graphs
                            .iter()
                            .map(|g| sample_paths(g, config))
                            .collect::<Result<Vec<_>>>()?,
                    );
                    bags.insert(key, Arc::clone(&b));
                    b
                }
            };
            let values = symmetric_from_fn(f.graphs.len(), |i, j| {
                kernel_unchecked(&fbags[i], &f.graphs[i], &fbags[j], &f.graphs[j], config)
            });
            let mut gram = GramMatrix::new(values)?;
            let id = config.id(&f.name);
            let (lo, hi) = gram.eigen_range();
            let jittered = lo < -crate::kernel::PSD_FLOOR * hi.abs();
            if jittered {
                let jitter = crate::kernel::PSD_FLOOR * gram.trace() / gram.dim() as f64;
                log::warn!("{id}: smallest eigenvalue {lo:.3e}; adding {jitter:.3e} to the diagonal");
                gram.add_to_diagonal(jitter);
            }
            out.push(GraphGram {
                id,
                function: f.name.clone(),
                config: *config,
                gram,
                jittered,
            });
        }
    }
    Ok(out)
}

/// Writes one matrix file per Gram plus `manifest.json` into `dir`.
pub fn write_graph_grams(dir: impl AsRef<std::path::Path>, grams: &[GraphGram]) -> Result<KernelManifest> {
    let dir = dir.as_ref();
    let size = grams.first().map_or(0, |g| g.gram.dim());
    let mut matrices = Vec::with_capacity(grams.len());
    for g in grams {
        let file = PathBuf::from(format!("{}.txt", g.id));
        let mut buf = Vec::new();
        write_matrix_text(g.gram.values(), &mut buf)?;
        crate::io::write_atomic(dir.join(&file), &buf)?;
        matrices.push(ManifestEntry {
            id: g.id.clone(),
            file,
            config: Some(serde_json::json!({
                "function": g.function,
                "path_kernel": g.config,
                "jittered": g.jittered,
            })),
        });
    }
    let manifest = KernelManifest { size, matrices };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    crate::io::write_atomic(dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

/// Path of the manifest written by [`write_graph_grams`].
pub fn manifest_path(dir: &std::path::Path) -> PathBuf {
    dir.join("manifest.json")
}
