//! Completion of high-order tensors with missing entries by fitting
//! tensor-train cores to the observed entries with a weighted least-squares
//! objective and first-order optimization.
//!
//! Module map:
//! - [`tensor`]: dense N-way tensors, matrices, unfold/fold, Kronecker and Hadamard products
//! - [`tt`]: tensor-train cores, reconstruction and subchain contractions
//! - [`wopt`]: weighted objective, analytic gradient, optimizer loop, completion
//! - [`tensorize`]: image-to-block-tensor reshaping for visual data
//! - [`eval`]: RSE/PSNR metrics, synthetic data, masks, finite-difference gradients
//! - [`io`]: binary tensor files, PPM images and key=value run configs
//!
//! Mode indices in the public API are 1-based.

pub mod error;
pub mod eval;
pub mod io;
pub mod tensor;
pub mod tensorize;
pub mod tt;
pub mod wopt;

pub use error::{Error, Result};
pub use tensor::{DenseTensor, Matrix, Shape};
pub use tt::{RankChain, TTCores};
pub use wopt::{
    GradientSet, InitScheme, Method, ObservedProblem, OptimizerConfig, OptimizerTrace, Termination,
};
