//! Latency-power trade-off analysis for downlink broadcast framing of short
//! packets.
//!
//! The library evaluates how much average frame duration (latency) and average
//! per-user receive time (power) a downlink broadcast frame costs when short
//! messages are grouped into jointly encoded packets. It provides:
//!
//! - finite-blocklength code-length numerics ([`fbl`]),
//! - convex/concave envelope machinery ([`envelope`]),
//! - a genie-aided lower bound on the trade-off curve ([`bound`]),
//! - analytic evaluators for three framing protocols ([`protocols`]),
//! - parameter optimization and Pareto hulls ([`optimize`]),
//! - a seeded Monte Carlo frame simulator ([`sim`]),
//! - a scenario-driven CLI ([`cli`]).

pub mod bound;
pub mod cli;
pub mod envelope;
pub mod error;
pub mod fbl;
pub mod optimize;
pub mod protocols;
pub mod sim;

pub use bound::Scenario;
pub use error::Error;
pub use fbl::{ChannelParams, FblContext};
