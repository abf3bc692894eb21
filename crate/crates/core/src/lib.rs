//! Reconstruction of a galaxy's 5D stellar population-kinematic distribution
//! function `f(x1, x2, v, z, t)` from an IFU datacube.
//!
//! The pipeline: [`grid_basis`] discretizes `f` in a tensor basis, [`templates`]
//! provides the Doppler-shifted spectral kernel, [`forward`] assembles the
//! factored block operators `H_r`, [`solver`] runs the projected
//! Nesterov-Kaczmarz iteration, [`mock`] builds ground truths and noisy cubes,
//! and [`diagnostics`] turns coefficients into marginals and kinematic maps.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar.

// `!(x > 0)` deliberately rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod grid_basis;
mod io;
pub mod linalg;
pub mod mock;
pub mod numeric;
pub mod solver;
pub mod templates;

pub use error::{Error, Result};
pub use numeric::Real;

pub type Basis64 = grid_basis::DiscreteBasis<f64>;
pub type Basis32 = grid_basis::DiscreteBasis<f32>;
pub type System64 = forward::ForwardSystem<f64>;
pub type System32 = forward::ForwardSystem<f32>;
pub type Templates64 = templates::TemplateGrid<f64>;
pub type Templates32 = templates::TemplateGrid<f32>;
pub type Datacube64 = forward::Datacube<f64>;
pub type Datacube32 = forward::Datacube<f32>;
pub type Setup64 = cli::preset::Setup<f64>;
pub type Setup32 = cli::preset::Setup<f32>;
