//! Parameters, node topology and the network state space.

mod config;
mod state;
mod topology;

pub use config::{SystemConfig, Violation, CONFIG_TOLERANCE};
pub use state::{
    enumerate_states, omega_contains, shop_level_support, NetworkState, NodeCount, StateSpace,
    DEFAULT_STATE_CAP,
};
pub use topology::{Node, Topology};

/// Checks a configuration against a topology; an empty list means valid.
pub fn validate_config(config: &SystemConfig, topology: &Topology) -> Vec<Violation> {
    config.validate(topology)
}
