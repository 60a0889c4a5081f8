//! Patch-based plug-and-play inverse solvers with diffusion-style priors.
//!
//! The crate restores an image `x` from `y = H x + n` with DPS or DiffPIR,
//! evaluating a sigma-conditioned denoiser either on the whole image or
//! through a shifted patch grid whose offset changes from step to step.

// `!(v > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod grid;
pub mod image;
pub mod io;
pub mod memory;
pub mod metrics;
pub mod operators;
pub mod phantom;
pub mod priors;
pub mod rng;
pub mod schedule;
pub mod solvers;

pub use error::{Error, Result};
pub use grid::{stitch, tile, PatchGrid, Rect, Tile};
pub use image::{pad, Image, PaddingMode};
pub use memory::MemoryLedger;
pub use operators::{cg_solve, ForwardOperator, NoiseModel};
pub use priors::{ConvSmootherPrior, DenoiserPrior, GaussianAnalyticPrior, Kernel, PriorSpec};
pub use schedule::{karras_sigmas, renoise, SigmaSchedule};
pub use solvers::{diffpir_run, dps_run, eval_prior, OffsetPolicy, PriorEvalMode, RunReport, SolverConfig, SolverKind};
