//! Discrete-frame simulator of an ambient-backscatter symbiotic radio network
//! with deep-Q-learning user association.
//!
//! A base station serves `M` cellular users in TDMA; `N` passive IoT devices
//! piggyback on the downlink by backscattering, each inside the time slot of
//! the one user it is associated with. Receivers apply successive interference
//! cancellation, so the per-device SINR depends on which other devices share
//! the same slot. The crate provides:
//!
//! - [`channel`]: topology sampling, distance-dependent path loss, and
//!   frame-correlated Rayleigh fading (first-order Gauss-Markov evolution).
//! - [`env`]: backscatter link gains, SIC-ordered SINRs and rates, and the
//!   state/reward observations consumed by the learning agents.
//! - [`oracle`]: exhaustive-search optimal association and a random baseline.
//! - [`nn`]: a self-contained dense Q-network with ReLU hidden layers,
//!   mean-squared TD loss, Adam, and a lagging target copy.
//! - [`agent`]: replay memory, the epsilon-greedy schedule, and the
//!   centralized (one joint action) and distributed (one action per device)
//!   agents.
//! - [`harness`]: seeded experiment execution with CSV traces and summaries.

pub mod agent;
pub mod channel;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod seeds;

pub use error::{Result, SrnError};
