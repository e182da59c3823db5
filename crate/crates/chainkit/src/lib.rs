//! Numerical toolkit for finite chains of coupled determinantal ensembles.
//!
//! A chain couples m levels of N points each through nearest-neighbour
//! transfer weights. The joint law of the m*N positions is determinantal:
//! it is both a product of determinants built from a biorthogonal function
//! system and a single determinant of an m x m block kernel. This crate
//! constructs the biorthogonal system, assembles the block kernel, and
//! evaluates the occupation statistics that follow from it (correlators,
//! gap probabilities, occupation-count generating functions, Janossy
//! densities), checking the determinant identity that ties the two
//! representations together. Brute-force oracles (exhaustive enumeration on
//! discrete spaces, Metropolis sampling) validate everything independently.

pub mod biorthogonal;
pub mod chain_model;
pub mod cli;
pub mod kernel;
mod linalg;
pub mod measure;
pub mod oracle;
pub mod statistics;

mod error;

pub use error::{Error, Result, ValidationReport, Violation};
