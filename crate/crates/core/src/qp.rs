//! SMO solver for the box- and simplex-constrained quadratic program shared
//! by SVDD and the one-class SVM:
//!
//! ```text
//! minimize    a' K a - q' a
//! subject to  sum(a) = 1,  0 <= a_i <= C
//! ```
//!
//! SVDD uses `q = diag(K)`, the one-class SVM uses `q = 0`. Reported
//! objectives are in the maximization form `-a' K a + q' a`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, SYMMETRY_TOL};

pub const DEFAULT_KKT_TOL: f64 = 1e-6;
/// An example is a support vector when `alpha_i > SV_THRESHOLD`.
pub const SV_THRESHOLD: f64 = 1e-7;
/// Pair updates allowed per training example.
pub const ITERATIONS_PER_EXAMPLE: usize = 10_000;

/// A problem instance. Borrowing the Gram matrix keeps line-search probes
/// cheap.
#[derive(Debug, Clone)]
pub struct QpProblem<'a> {
    k: &'a GramMatrix,
    q: Vec<f64>,
    c: f64,
}

impl<'a> QpProblem<'a> {
    pub fn new(k: &'a GramMatrix, q: Vec<f64>, c: f64) -> Result<Self> {
        let n = k.dim();
        if n == 0 {
            return Err(Error::arg("empty problem"));
        }
        if q.len() != n {
            return Err(Error::arg(format!("linear term has length {}, expected {n}", q.len())));
        }
        if !(c > 0.0) || c.is_nan() {
            return Err(Error::arg(format!("box bound C must be > 0, got {c}")));
        }
        if c * (n as f64) < 1.0 - 1e-12 {
            return Err(Error::Infeasible { c, n });
        }
        if !k.is_symmetric(SYMMETRY_TOL) {
            return Err(Error::arg("kernel matrix is not symmetric"));
        }
        Ok(Self { k, q, c })
    }

    /// SVDD dual: linear term is the kernel diagonal.
    pub fn svdd(k: &'a GramMatrix, c: f64) -> Result<Self> {
        Self::new(k, k.diag().to_vec(), c)
    }

    /// One-class SVM dual: no linear term.
    pub fn ocsvm(k: &'a GramMatrix, c: f64) -> Result<Self> {
        Self::new(k, vec![0.0; k.dim()], c)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn gram(&self) -> &GramMatrix {
        self.k
    }

    /// `-a' K a + q' a`.
    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let quad = quadratic_form(self.k, alpha);
        let lin: f64 = alpha.iter().zip(&self.q).map(|(a, q)| a * q).sum();
        -quad + lin
    }

    fn solution(&self, alpha: Vec<f64>, iterations: usize, violation: f64) -> AlphaSolution {
        let objective = self.objective(&alpha);
        AlphaSolution::new(alpha, self.c, objective, iterations, violation)
    }
}

/// `a' K a`, skipping zero coefficients.
pub fn quadratic_form(k: &GramMatrix, alpha: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, &ai) in alpha.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let row = k.values().row(i);
        let mut s = 0.0;
        for (j, &aj) in alpha.iter().enumerate() {
            if aj != 0.0 {
                s += aj * row[j];
            }
        }
        total += ai * s;
    }
    total
}

/// Dual variables and derived support-vector sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    pub alpha: Vec<f64>,
    pub c: f64,
    /// Maximization-form objective `-a' K a + q' a`.
    pub objective: f64,
    pub sv_indices: Vec<usize>,
    pub margin_sv_indices: Vec<usize>,
    pub iterations: usize,
    /// Largest pairwise KKT violation at exit.
    pub violation: f64,
}

impl AlphaSolution {
    pub fn new(alpha: Vec<f64>, c: f64, objective: f64, iterations: usize, violation: f64) -> Self {
        let tau = SV_THRESHOLD;
        let sv_indices = (0..alpha.len()).filter(|&i| alpha[i] > tau).collect();
        let margin_sv_indices = (0..alpha.len())
            .filter(|&i| alpha[i] > tau && alpha[i] < c - tau)
            .collect();
        Self {
            alpha,
            c,
            objective,
            sv_indices,
            margin_sv_indices,
            iterations,
            violation,
        }
    }

    /// Number of support vectors, `card(alpha)`.
    pub fn card(&self) -> usize {
        self.sv_indices.len()
    }

    pub fn is_bounded(&self, i: usize) -> bool {
        self.alpha[i] >= self.c - SV_THRESHOLD
    }
}

/// Euclidean projection onto `{a : sum(a) = 1, 0 <= a_i <= c}`.
pub fn project_capped_simplex(v: &[f64], c: f64) -> Vec<f64> {
    let clip = |x: f64| x.clamp(0.0, c);
    let mass = |tau: f64| v.iter().map(|&x| clip(x - tau)).sum::<f64>();
    let lo0 = v.iter().copied().fold(f64::INFINITY, f64::min) - c;
    let hi0 = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = if (mass(lo) - 1.0).abs() <= (mass(hi) - 1.0).abs() { lo } else { hi };
    v.iter().map(|&x| clip(x - tau)).collect()
}

fn is_feasible(alpha: &[f64], c: f64) -> bool {
    let s: f64 = alpha.iter().sum();
    (s - 1.0).abs() <= 1e-12 && alpha.iter().all(|&a| (0.0..=c).contains(&a))
}

/// SMO with maximal-violating-pair selection.
#[derive(Debug, Clone, Copy)]
pub struct SmoSolver {
    pub kkt_tol: f64,
    /// Defaults to `ITERATIONS_PER_EXAMPLE * n`.
    pub max_iterations: Option<usize>,
}

impl Default for SmoSolver {
    fn default() -> Self {
        Self {
            kkt_tol: DEFAULT_KKT_TOL,
            max_iterations: None,
        }
    }
}

impl SmoSolver {
    pub fn with_tol(kkt_tol: f64) -> Self {
        Self {
            kkt_tol,
            ..Self::default()
        }
    }

    pub fn solve(&self, problem: &QpProblem, warm_start: Option<&[f64]>) -> Result<AlphaSolution> {
        self.run(problem, warm_start, None)
    }

    /// Like [`SmoSolver::solve`], also returning the objective after every
    /// pair update (entry 0 is the starting point).
    pub fn solve_with_history(
        &self,
        problem: &QpProblem,
        warm_start: Option<&[f64]>,
    ) -> Result<(AlphaSolution, Vec<f64>)> {
        let mut history = Vec::new();
        let sol = self.run(problem, warm_start, Some(&mut history))?;
        Ok((sol, history))
    }

    fn run(
        &self,
        problem: &QpProblem,
        warm_start: Option<&[f64]>,
        mut history: Option<&mut Vec<f64>>,
    ) -> Result<AlphaSolution> {
        let n = problem.len();
        let c = problem.c;
        let k = problem.k.values();
        let q = &problem.q;

        let mut alpha = match warm_start {
            Some(w) => {
                if w.len() != n {
                    return Err(Error::arg(format!("warm start has length {}, expected {n}", w.len())));
                }
                if is_feasible(w, c) {
                    w.to_vec()
                } else {
                    project_capped_simplex(w, c)
                }
            }
            None => vec![(1.0 / n as f64).min(c); n],
        };

        // gradient of the minimization form: 2 K a - q
        let full_gradient = |alpha: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let row = k.row(i);
                    let s: f64 = alpha.iter().zip(row).map(|(a, kij)| a * kij).sum();
                    2.0 * s - q[i]
                })
                .collect()
        };
        let mut grad = full_gradient(&alpha);
        let max_iter = self.max_iterations.unwrap_or(ITERATIONS_PER_EXAMPLE * n);
        let objective_from_grad = |alpha: &[f64], grad: &[f64]| -> f64 {
            let ag: f64 = alpha.iter().zip(grad).map(|(a, g)| a * g).sum();
            let aq: f64 = alpha.iter().zip(q).map(|(a, q)| a * q).sum();
            0.5 * (aq - ag)
        };
        if let Some(h) = history.as_deref_mut() {
            h.push(objective_from_grad(&alpha, &grad));
        }

        let mut iter = 0usize;
        let mut refreshed = false;
        loop {
            // i: may increase (a_i < C), smallest gradient
            // j: may decrease (a_j > 0), largest gradient
            let mut up: Option<usize> = None;
            let mut low: Option<usize> = None;
            for t in 0..n {
                if alpha[t] < c && up.is_none_or(|u| grad[t] < grad[u]) {
                    up = Some(t);
                }
                if alpha[t] > 0.0 && low.is_none_or(|l| grad[t] > grad[l]) {
                    low = Some(t);
                }
            }
            let (i, j) = match (up, low) {
                (Some(i), Some(j)) => (i, j),
                _ => return Ok(problem.solution(finish(alpha, c), iter, 0.0)),
            };
            let violation = grad[j] - grad[i];
            if violation < self.kkt_tol {
                if refreshed {
                    return Ok(problem.solution(finish(alpha, c), iter, violation.max(0.0)));
                }
                // confirm against a freshly computed gradient
                grad = full_gradient(&alpha);
                refreshed = true;
                continue;
            }
            refreshed = false;
            if iter >= max_iter {
                let best = problem.solution(finish(alpha, c), iter, violation);
                return Err(Error::NotConverged {
                    iterations: iter,
                    violation,
                    best: Box::new(best),
                });
            }

            let eta = k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]];
            let room = (c - alpha[i]).min(alpha[j]);
            let step = if eta > 1e-15 * (k[[i, i]].abs() + k[[j, j]].abs()).max(f64::MIN_POSITIVE) {
                (violation / (2.0 * eta)).min(room)
            } else {
                room
            };

            let (old_i, old_j) = (alpha[i], alpha[j]);
            alpha[i] = if step >= c - old_i { c } else { old_i + step };
            alpha[j] = if step >= old_j { 0.0 } else { old_j - step };
            let di = alpha[i] - old_i;
            let dj = alpha[j] - old_j;
            let (ki, kj) = (k.row(i), k.row(j));
            for t in 0..n {
                grad[t] += 2.0 * (di * ki[t] + dj * kj[t]);
            }
            iter += 1;
            if let Some(h) = history.as_deref_mut() {
                h.push(objective_from_grad(&alpha, &grad));
            }
        }
    }
}

/// Restores `sum(a) = 1` exactly when pair updates have drifted.
fn finish(alpha: Vec<f64>, c: f64) -> Vec<f64> {
    if is_feasible(&alpha, c) {
        alpha
    } else {
        project_capped_simplex(&alpha, c)
    }
}

/// Solves `problem`, optionally warm-started, to the given KKT tolerance.
pub fn solve(problem: &QpProblem, warm_start: Option<&[f64]>, kkt_tol: f64) -> Result<AlphaSolution> {
    SmoSolver::with_tol(kkt_tol).solve(problem, warm_start)
}
