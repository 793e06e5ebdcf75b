//! Partial-matching dissimilarities on discrete oriented varifolds and
//! their use as data-attachment terms in LDDMM geodesic-shooting
//! registration of curve sets and triangle meshes.

pub mod check;
pub mod cli;
pub mod config;
pub mod deformation;
pub mod dissimilarity;
pub mod error;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod optimizer;
pub mod registration;
pub mod synthetic;

pub use error::{Error, Result};
