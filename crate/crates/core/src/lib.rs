//! Support vector data description and one-class SVMs with multiple kernel
//! learning, a slim variant that favours tighter boundaries, a bag-of-paths
//! graph kernel and an evaluation harness.
//!
//! ```
//! use mksvdd::dataset::gen_2d_target;
//! use mksvdd::kernel::{KernelDictionary, KernelSpec, PrecomputedKernels};
//! use mksvdd::mkl::{fit_mkl, MklConfig};
//! use mksvdd::one_class::ModelKind;
//!
//! let x = gen_2d_target(1, 2, 40).unwrap();
//! let dict = KernelDictionary::from_specs(&KernelSpec::rbf_grid(), &PrecomputedKernels::default(), x.clone()).unwrap();
//! let (model, trace) = fit_mkl(&dict, &MklConfig::new(0.1, 0.0), ModelKind::Svdd).unwrap();
//! assert!(trace.converged());
//! let scores = model.score(&x).unwrap();
//! assert_eq!(scores.len(), 40);
//! ```

pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph_kernel;
pub mod io;
pub mod kernel;
pub mod mkl;
pub mod one_class;
pub mod qp;

pub use dataset::{Label, SampleMatrix};
pub use error::{Error, Result};
pub use kernel::{GramMatrix, KernelDictionary, KernelSpec, SimplexWeights};
pub use mkl::{fit_mkl, Method, MklConfig, MklTrace};
pub use one_class::{ModelKind, OneClassModel};
pub use qp::{AlphaSolution, QpProblem, SmoSolver};
