//! Stationary analysis of a dockless bike-sharing network with unusable
//! bikes.
//!
//! Parking regions and the maintenance shop are solved in isolation as
//! level-structured Markov processes ([`region_chain`], [`shop_chain`]) by
//! UL-type RG-factorization ([`markov_core`]). Their relative arrival rates
//! come from a nonlinear traffic equation ([`routing`]), and the network law
//! is the product of the node laws over the constrained state space
//! ([`product_form`]). [`simulator`] runs the same network event by event.

pub mod error;
pub mod markov_core;
pub mod measures;
pub mod model;
pub mod product_form;
pub mod region_chain;
pub mod routing;
pub mod shop_chain;
pub mod simulator;

pub use nalgebra::DMatrix;

pub use error::{Error, Result};
pub use markov_core::{BlockGenerator, RGFactors};
pub use measures::{compute_measures, BikeAudit, MeasureReport};
pub use model::{
    enumerate_states, validate_config, NetworkState, Node, NodeCount, StateSpace, SystemConfig,
    Topology, Violation,
};
pub use product_form::{MarginalQuery, ProductFormSolution};
pub use region_chain::{solve_region, RegionSolution};
pub use routing::{
    solve_relative_rates, FixedPointOptions, IterationTrace, Normalization, RelativeRates,
};
pub use shop_chain::{solve_shop, ShopSolution};
pub use simulator::{simulate, SimConfig, SimEstimates};
