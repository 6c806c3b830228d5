//! Measurement phase retrieval for intensity-only random projections.
//!
//! An optical random projector computes `y = A x` with an unknown complex
//! Gaussian transmission matrix `A`, but the camera only records `|y|^2`.
//! Because the input is under our control, probing differences `x_q - x_r`
//! between a signal and a set of reference anchors yields squared Euclidean
//! distances between points `y_q` in the complex plane. Localizing those
//! points (classical MDS, masked stress descent, Procrustes alignment across
//! frames) recovers `y` up to one phase and one conjugation per row of `A`,
//! which leaves the distribution of `A` unchanged.
//!
//! Module map:
//! - [`edm`] and [`types`]: planar EDM primitives and shared domain types.
//! - [`opusim`]: simulated projector with quantizing camera, plus the [`opusim::Opu`] trait.
//! - [`refdesign`]: binary anchors with nested supports, threshold estimation.
//! - [`probe`]: turning frames and anchors into probe inputs and distance observations.
//! - [`solver`]: MDS, squared-stress descent, Procrustes, SR-LS, and the per-row pipeline.
//! - [`metrics`]: linearity error, good bits, EDM error scaling.
//! - [`rsvd`]: randomized SVD, with a Gaussian sketch or a phase-recovered optical sketch.
//! - [`experiments`]: desk-scale drivers that produce the tables the CLI writes.

pub mod edm;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod opusim;
pub mod probe;
pub mod refdesign;
pub mod rng;
pub mod rsvd;
pub mod solver;
pub mod types;

pub use error::{MprError, Result};
pub use nalgebra;
pub use nalgebra::Complex;
pub use types::{DistanceObservation, EntryFlag, Frame, PointSet, RecoveredProjections, ReferenceSet};

/// Complex scalar used for recovered projections.
pub type Complex64 = Complex<f64>;
