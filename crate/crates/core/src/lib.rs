//! Mobility-aware federated caching for dense small-cell networks: density
//! prediction, federated demand learning, cost-driven cache placement,
//! three-tier routing and a trace-driven simulation harness.

pub mod demand;
pub mod fl;
pub mod mobility;
pub mod model;
pub mod placement;
pub mod routing;
pub mod sim;
pub mod trace;
