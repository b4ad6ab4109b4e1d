//! Coordinate MLPs with batch, layer, global and cross normalization, their
//! empirical neural tangent kernels, and desk-scale signal fitting tasks.
//!
//! Everything is double precision and deterministic: the same inputs and
//! seeds give bit-identical results regardless of thread count.

pub mod error;
pub mod grad;
pub mod linalg;
pub mod net;
pub mod norm;
pub mod ntk;
pub mod tasks;
pub mod train;

pub use error::{DivergedRun, Error, Result};
pub use grad::{param_jacobian, Centering, LossKind, ParamJacobian};
pub use linalg::{mat_exp_neg_sym, sym_eig, DenseMatrix, SymEigDecomp};
pub use net::{forward, init_params, predict, NetworkConfig, NetworkParams, NormPlacement};
pub use norm::{NormKind, NormStats};
pub use ntk::{empirical_ntk, eigen_summary, EigenSummary, KappaEstimate, NtkMatrix};
pub use tasks::{ForwardOperator, TaskKind, TaskSpec};
pub use train::{train, Optimizer, TrainConfig, TrainTrace};
