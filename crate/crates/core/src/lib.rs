//! Sliced-Wasserstein energies of discrete point clouds.
//!
//! For a target support `Z` (`n` points in `R^d`) this crate evaluates and
//! minimises `E(Y) = SW_2^2(gamma_Y, gamma_Z)` and its `p`-direction
//! Monte-Carlo counterpart `E_p`. It exposes the piecewise-quadratic cell
//! structure of `E_p`, block-coordinate descent with closed-form position
//! updates, stochastic gradient descent (noised, batched, decreasing-step and
//! barycentric variants), the critical-point fixed-point map, and exact
//! discrete optimal transport references used to measure convergence.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cells;
pub mod energy;
pub mod error;
pub mod exact_ot;
pub mod geometry;
mod linalg;
mod slices;
pub mod solvers;

pub use error::{Error, Result};
pub use geometry::{
    project, rotate, sample_sphere, sort_permutation, w2_1d_uniform, w_theta, DirectionSet,
    GradientMatrix, SortPermutation, Support,
};
