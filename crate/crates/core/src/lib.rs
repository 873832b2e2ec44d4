//! Pulsed two-mode squeezed light from a lossy Kerr microresonator.
//!
//! The pump is solved classically with self-phase modulation, the
//! signal/idler pair is tracked through its Gaussian second moments, and the
//! resulting joint temporal amplitude feeds Schmidt-mode, photon-statistics
//! and coincidence-correction analyses.

pub mod error;
pub mod events;
pub mod fockoracle;
pub mod model;
pub mod moments;
pub mod multiphoton;
pub mod observables;
pub mod ode;
pub mod pump;
pub mod schmidt;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
