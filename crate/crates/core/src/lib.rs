//! Linear Hamiltonian systems whose first particle has its velocity flipped at
//! random times.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] builds a [`SystemSpec`] from a positive-definite coupling matrix
//!   and checks whether the flip can reach every mode.
//! * [`dynamics`] holds phase-space states, the exact free flow and the flip.
//! * [`torus`] works on invariant tori: the action map induced by one flip and
//!   the explicit contracting flip momentum.
//! * [`steering`] turns the contraction into flip schedules that drive any state
//!   to a chosen target, and probes the local covering rank.
//! * [`stochastic`] simulates the piecewise-deterministic process and its
//!   embedded chain, and computes time averages.
//! * [`liouville`] samples the microcanonical measure and compares it with the
//!   dynamics.
//! * [`io`] reads and writes the file formats.
//! * [`search`] minimises oscillatory functions of time.
//! * [`rng`] hands out seeded random streams.

pub mod dynamics;
pub mod error;
pub mod io;
pub mod liouville;
pub mod model;
pub mod rng;
pub mod search;
pub mod steering;
pub mod stochastic;
pub mod torus;

pub use nalgebra;

pub use dynamics::{State, TorusVector};
pub use error::Error;
pub use io::ResultRow;
pub use liouville::{ErgodicReport, ReportConfig};
pub use model::{AdmissibilityReport, SystemSpec};
pub use steering::{SteerOptions, SteerResult};
pub use stochastic::{EventLog, Observable, WaitingLaw};
pub use torus::TorusMetrics;
