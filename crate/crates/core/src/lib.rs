//! Simulation and verification laboratory for noncoherent, time-selective
//! Rayleigh block-fading channels.
//!
//! Two receiver discretizations are implemented side by side: symbol matched
//! filtering (one sample per symbol) and a half-symbol integrate-and-dump
//! front-end sampled at twice the symbol rate. On top of them the crate
//! certifies the identifiability structure of the oversampled model
//! (Jacobian determinants, full-spark Vandermonde structure), recovers
//! channel and data jointly from a single pilot, and estimates how mutual
//! information grows with SNR for both front-ends.

pub mod discretization;
pub mod error;
pub mod estimator;
pub mod fading;
pub mod identifiability;
pub mod info_metrics;
pub mod knn;
pub mod linalg;
pub mod quadrature;
pub mod random;
pub mod serde_complex;

pub use error::{Error, Result};
pub use fading::{BlockSpec, FadingCoeffs, PsdKind, PsdSpec};
pub use num_complex::Complex64;
