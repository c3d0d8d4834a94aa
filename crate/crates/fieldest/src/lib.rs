//! Distributed estimation of an unknown scalar field by a network of mobile
//! sensors.
//!
//! The field over a rectangular domain is parameterized by Gaussian radial
//! basis functions. Mobile sensors measure the field at their own position,
//! tour the kernel centres inside their Voronoi cell to build up sufficient
//! excitation, and run one of several adaptive estimation laws:
//!
//! * `Single` — one sensor estimating the full parameter vector,
//! * `S1` — every sensor estimates the full vector, coupled through a
//!   Laplacian consensus term,
//! * `S2` — every sensor estimates only the parameters whose centres lie in
//!   its own cell, treating foreign-kernel contributions as a disturbance,
//! * `S3` — `S2` plus directed-consensus cross-estimates of the other
//!   sensors' blocks, used to compensate the disturbance.
//!
//! All scenario execution is deterministic: a fixed-step RK4 integrator
//! advances positions, filter states, and estimates on one shared clock, and
//! all randomness is drawn from per-purpose seeded streams.
//!
//! The [`sim`] module runs whole scenarios described by [`config`] files;
//! the lower-level modules ([`rbf`], [`field`], [`partition`], [`motion`],
//! [`estimators`]) are usable on their own.

pub mod config;
pub mod error;
pub mod estimators;
pub mod field;
pub mod geometry;
pub mod logs;
pub mod metrics;
pub mod motion;
pub mod partition;
pub mod rbf;
pub mod sim;

pub use error::{Error, Result};
pub use field::FieldModel;
pub use rbf::KernelBasis;
pub use sim::{run_scenario, RunRecord, SimScenario};
