//! Stationary performance measures computed from node marginals.

use std::collections::BTreeMap;
use std::io::Write;

use crate::model::{NetworkState, Node, NodeCount, SystemConfig, Topology};
use crate::product_form::ProductFormSolution;

/// Tolerance of the bike-count audit.
pub const AUDIT_TOLERANCE: f64 = 1e-8;

/// Expected bike counts by location and condition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BikeAudit {
    pub region_usable: f64,
    pub region_unusable: f64,
    pub shop_usable: f64,
    pub shop_unusable: f64,
    pub riding: f64,
    pub removal: f64,
    pub returning: f64,
}

impl BikeAudit {
    pub fn total(&self) -> f64 {
        self.region_usable
            + self.region_unusable
            + self.shop_usable
            + self.shop_unusable
            + self.riding
            + self.removal
            + self.returning
    }

    /// `|total - K|`.
    pub fn discrepancy(&self, fleet: usize) -> f64 {
        (self.total() - fleet as f64).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureReport {
    /// Stationary proportion of unusable bikes, `E[unusable] / K`.
    pub eta: f64,
    /// Stationary proportion of usable bikes at regions and on ride and
    /// return roads, `E[usable] / K`.
    pub xi: f64,
    /// Probability that the shop holds at least one unusable bike.
    pub f_a: f64,
    /// Repaired share of the bikes in the shop.
    pub gamma1: f64,
    /// Shop share of all unusable bikes.
    pub gamma2: f64,
    pub e_unusable: f64,
    pub e_usable: f64,
    /// Set when the shop is empty with probability one and `gamma1` is
    /// reported as 0.
    pub gamma1_undefined: bool,
    /// Set when `E[unusable] = 0` and `gamma2` is reported as 0.
    pub gamma2_undefined: bool,
    pub audit: BikeAudit,
}

impl MeasureReport {
    pub const CSV_HEADER: &'static str =
        "eta,xi,F_A,gamma1,gamma2,E_unusable,E_usable,gamma1_undefined,gamma2_undefined,audit_total";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{:.12e}",
            self.eta,
            self.xi,
            self.f_a,
            self.gamma1,
            self.gamma2,
            self.e_unusable,
            self.e_usable,
            self.gamma1_undefined,
            self.gamma2_undefined,
            self.audit.total()
        )
    }

    pub fn audit_ok(&self, fleet: usize) -> bool {
        self.audit.discrepancy(fleet) <= AUDIT_TOLERANCE
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        writeln!(out, "{}", self.csv_row())
    }
}

/// Measures from per-node marginal laws, `marginals[v]` listing
/// `(count, probability)` pairs for node `v` of `topology`.
pub fn measures_from_marginals(
    config: &SystemConfig,
    topology: &Topology,
    marginals: &[Vec<(NodeCount, f64)>],
) -> MeasureReport {
    let mut audit = BikeAudit::default();
    let mut shop_busy = 0.0;
    for (v, law) in marginals.iter().enumerate() {
        let node = topology.node(v);
        for &(c, p) in law {
            let (g, b) = (c.good as f64 * p, c.bad as f64 * p);
            match node {
                Node::Shop => {
                    audit.shop_usable += g;
                    audit.shop_unusable += b;
                    if c.bad > 0 {
                        shop_busy += p;
                    }
                }
                Node::Region(_) => {
                    audit.region_usable += g;
                    audit.region_unusable += b;
                }
                Node::Ride { .. } => audit.riding += g,
                Node::Removal(_) => audit.removal += b,
                Node::Return(_) => audit.returning += g,
            }
        }
    }
    let fleet = config.fleet as f64;
    let e_unusable = audit.region_unusable + audit.shop_unusable + audit.removal;
    let e_usable = audit.region_usable + audit.riding + audit.returning;
    let shop_total = audit.shop_usable + audit.shop_unusable;
    let gamma1_undefined = shop_total <= 0.0;
    let gamma2_undefined = e_unusable <= 0.0;
    MeasureReport {
        eta: e_unusable / fleet,
        xi: e_usable / fleet,
        f_a: shop_busy.clamp(0.0, 1.0),
        gamma1: if gamma1_undefined { 0.0 } else { audit.shop_usable / shop_total },
        gamma2: if gamma2_undefined { 0.0 } else { audit.shop_unusable / e_unusable },
        e_unusable,
        e_usable,
        gamma1_undefined,
        gamma2_undefined,
        audit,
    }
}

/// Measures of the product-form law.
pub fn compute_measures(sol: &ProductFormSolution, config: &SystemConfig) -> MeasureReport {
    let topology = sol.topology();
    let marginals: Vec<_> = (0..topology.node_count())
        .map(|v| sol.node_marginal(v))
        .collect();
    let report = measures_from_marginals(config, topology, &marginals);
    if !report.audit_ok(config.fleet) {
        log::warn!(
            "bike audit off by {:e}",
            report.audit.discrepancy(config.fleet)
        );
    }
    report
}

/// Per-node marginals of an explicit law over network states.
pub fn marginals_of_distribution<'a>(
    topology: &Topology,
    law: impl IntoIterator<Item = (&'a NetworkState, f64)>,
) -> Vec<Vec<(NodeCount, f64)>> {
    let mut acc: Vec<BTreeMap<NodeCount, f64>> = vec![BTreeMap::new(); topology.node_count()];
    for (state, p) in law {
        for (v, &c) in state.counts.iter().enumerate() {
            *acc[v].entry(c).or_insert(0.0) += p;
        }
    }
    acc.into_iter().map(|m| m.into_iter().collect()).collect()
}

/// Measures of an explicit law over network states.
pub fn measures_from_distribution<'a>(
    config: &SystemConfig,
    topology: &Topology,
    law: impl IntoIterator<Item = (&'a NetworkState, f64)>,
) -> MeasureReport {
    measures_from_marginals(config, topology, &marginals_of_distribution(topology, law))
}
