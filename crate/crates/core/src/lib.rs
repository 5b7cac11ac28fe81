//! Quantum and semiclassical analysis of three bosonic modes sharing N particles.
//!
//! Fock-space spectrum, torus wave functions in the relative phases,
//! organising-centre classification, classical reduced dynamics and mean-field
//! phase locking.

pub mod classical;
pub mod classifier;
pub mod export;
pub mod fock;
pub mod meanfield;
pub mod ode;
pub mod optimize;
pub mod torusfield;

pub use classical::ChaosProfile;
pub use classifier::{Center, Classification, StateAssignment, Thresholds};
pub use fock::{EigenSystem, FockBasis, ModelParams};
pub use torusfield::{TorusField, TorusGrid};
