//! Implicit time stepping for the parabolic fractional 1-Laplacian
//! `u_t + (-Δ)^s_1 u = f` on a box with zero exterior data.
//!
//! Each time step minimises a convex fractional total-variation energy plus
//! a quadratic fidelity term. The step is solved twice, by a `p → 1`
//! continuation of smooth problems and by a primal-dual saddle-point
//! iteration whose dual variable is the antisymmetric sign field `Z`. The
//! [`diagnostics`] module checks the a priori estimates of the scheme on
//! computed trajectories.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod grid;
pub mod io;
pub mod rothe;
pub mod step;

pub use energy::{Field, StepData};
pub use error::{Error, Result};
pub use grid::{assemble_kernel, build_grid, Grid, GridSpec, KernelWeights, TailMode};
