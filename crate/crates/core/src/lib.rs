//! Privacy-preserving federated visualization.
//!
//! Clients bin their raw records into feature vectors over a shared index
//! space. A coordinator recovers global chart data either exactly, through
//! pairwise-masked secure summation ([`secagg`]), or approximately, through a
//! federated-averaged prediction model ([`model`]). Raw records never leave a
//! client.

pub mod compose;
pub mod datasim;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod secagg;
pub mod sweep;
