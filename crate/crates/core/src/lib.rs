//! Geometry-aware radiative Gaussian splatting for sparse-view static and
//! dynamic cone-beam CT.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod gsplat;
pub mod io;
pub mod linalg;
pub mod neural;
pub mod projector;
pub mod recon;
pub mod train;
pub mod tv;

pub use error::{Error, Result};
