//! Couples physics-based and data-driven discrete-time models into one
//! analyzable state-space system.
//!
//! The crate ships a reference scenario — an equivalent-circuit microgrid
//! feeding a data-center load learned as a delayed-input network — together
//! with the machinery to express coupling terms, validate them, compose the
//! subsystems, and run control analyses: equilibrium solving, eigenvalue
//! stability, quadratic Lyapunov certificates, controllability rank and
//! parameter sweeps.
//!
//! With the default `parallel` feature the Monte-Carlo and per-point
//! analysis loops run on rayon; disabling it falls back to sequential
//! evaluation with bit-identical results.

pub mod analysis;
pub mod coupling;
pub mod error;
pub mod microgrid;
pub mod model;
pub mod report;
pub mod scenario;
pub mod signal;
pub mod wann;

mod parallel;

pub use error::ModelError;
pub use model::{discretize_euler, ContinuousModel, DiscreteSystem, SubsystemModel};
pub use signal::{Signal, SignalRole, SignalSet, StateVector};
