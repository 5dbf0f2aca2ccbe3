//! Simulation library for federated learning over an uplink NOMA network.
//!
//! The server coordinates a fixed population of clients. Each round it
//! selects a subset by age-of-update (AoU) priority, allocates transmit
//! power in closed form (Lambert-W solution of the KKT stationarity
//! condition, with subgradient dual updates), trains local models by
//! full-batch gradient descent, and aggregates them with AoU weights.
//! An optional server-side ANN predicts the local models of unselected
//! clients and feeds them into aggregation behind an error gate.
//!
//! Modules map to the subsystems of the simulator:
//!
//! - [`channel`]: topology, path loss, Rayleigh fading, SIC decoding
//!   order and per-client NOMA/OMA achievable rates.
//! - [`scheduler`]: AoU state machine, selection weights, ranked
//!   selecting list, ACS and RCS selection.
//! - [`resource`]: compute/upload time models, Lambert-W power
//!   allocation with dual updates, random-power and OMA baselines.
//! - [`learning`]: datasets (MNIST IDX, synthetic), iid/non-iid
//!   partitions, multinomial logistic regression, AoU-weighted
//!   aggregation, convergence diagnostics.
//! - [`predictor`]: per-client single-hidden-layer ANN that predicts
//!   unselected clients' models from a reference client's model.
//! - [`sim`]: the per-round orchestration loop, experiment driver and
//!   scheme comparison.

pub mod channel;
pub mod dd;
pub mod error;
pub mod learning;
pub mod predictor;
pub mod resource;
pub mod rng;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};
