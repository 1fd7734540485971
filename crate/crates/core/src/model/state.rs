use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{Node, SystemConfig, Topology};

/// Default upper bound on the number of states an enumeration may visit.
pub const DEFAULT_STATE_CAP: u128 = 100_000_000;

/// Usable and unusable bikes held by one node. Ride and return roads only
/// carry usable bikes, removal roads only unusable ones.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeCount {
    pub good: usize,
    pub bad: usize,
}

impl NodeCount {
    pub const fn new(good: usize, bad: usize) -> Self {
        Self { good, bad }
    }

    pub const fn total(self) -> usize {
        self.good + self.bad
    }
}

/// One element of the network state space: the counts of every node in
/// topology order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NetworkState {
    pub counts: Vec<NodeCount>,
}

impl NetworkState {
    pub fn empty(topology: &Topology) -> Self {
        Self {
            counts: vec![NodeCount::default(); topology.node_count()],
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c.total()).sum()
    }

    pub fn total_bad(&self) -> usize {
        self.counts.iter().map(|c| c.bad).sum()
    }

    pub fn shop(&self) -> NodeCount {
        self.counts[0]
    }

    pub fn region(&self, i: usize) -> NodeCount {
        self.counts[1 + i]
    }
}

impl fmt::Display for NetworkState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .counts
            .iter()
            .map(|c| format!("({},{})", c.good, c.bad))
            .collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// Membership test for the state space, written directly from its defining
/// constraints.
pub fn omega_contains(config: &SystemConfig, topology: &Topology, state: &NetworkState) -> bool {
    if state.counts.len() != topology.node_count() || state.total() != config.fleet {
        return false;
    }
    let k = config.fleet;
    let m = config.remove_batch;
    let z = config.dispatch_batch;
    let phi = config.phi();
    let psi = config.psi();
    topology
        .nodes()
        .iter()
        .zip(&state.counts)
        .all(|(node, c)| match *node {
            Node::Shop => {
                c.good <= z && c.bad <= phi * m && c.total() % m == 0 && c.total() / m <= phi
            }
            Node::Region(_) => c.bad <= m && c.good <= k,
            Node::Ride { .. } => c.bad == 0 && c.good <= k,
            Node::Removal(_) => c.good == 0 && c.bad % m == 0 && c.bad / m <= phi,
            Node::Return(i) => {
                let zi = config.dispatch_share(i);
                c.bad == 0 && zi > 0 && c.good % zi == 0 && (c.good / zi) * psi <= phi
            }
        })
}

/// The admissible local states of every node, with enumeration of all
/// network states whose node totals add up to the fleet size.
///
/// States are produced lexicographically: node by node in topology order,
/// each node's `(good, bad)` pair compared good-first.
#[derive(Debug, Clone)]
pub struct StateSpace {
    fleet: usize,
    supports: Vec<Vec<NodeCount>>,
    lookup: Vec<HashMap<NodeCount, usize>>,
    // feasible[v][t]: nodes v.. can hold exactly t bikes
    feasible: Vec<Vec<bool>>,
}

impl StateSpace {
    pub fn new(config: &SystemConfig, topology: &Topology) -> Self {
        let supports: Vec<Vec<NodeCount>> = topology
            .nodes()
            .iter()
            .map(|&node| local_support(config, node))
            .collect();
        Self::from_supports(config.fleet, supports)
    }

    fn from_supports(fleet: usize, supports: Vec<Vec<NodeCount>>) -> Self {
        let lookup = supports
            .iter()
            .map(|s| s.iter().enumerate().map(|(k, &c)| (c, k)).collect())
            .collect();
        let n = supports.len();
        let mut feasible = vec![vec![false; fleet + 1]; n + 1];
        feasible[n][0] = true;
        for v in (0..n).rev() {
            for t in 0..=fleet {
                feasible[v][t] = supports[v]
                    .iter()
                    .any(|c| c.total() <= t && feasible[v + 1][t - c.total()]);
            }
        }
        Self {
            fleet,
            supports,
            lookup,
            feasible,
        }
    }

    pub fn fleet(&self) -> usize {
        self.fleet
    }

    pub fn node_count(&self) -> usize {
        self.supports.len()
    }

    pub fn support(&self, node: usize) -> &[NodeCount] {
        &self.supports[node]
    }

    pub fn local_index(&self, node: usize, count: NodeCount) -> Option<usize> {
        self.lookup[node].get(&count).copied()
    }

    /// Exact number of states, by convolving per-node support sizes.
    pub fn count(&self) -> u128 {
        let mut ways = vec![0u128; self.fleet + 1];
        ways[0] = 1;
        for s in &self.supports {
            let mut next = vec![0u128; self.fleet + 1];
            for (t, &w) in ways.iter().enumerate() {
                if w == 0 {
                    continue;
                }
                for c in s {
                    if t + c.total() <= self.fleet {
                        next[t + c.total()] = next[t + c.total()].saturating_add(w);
                    }
                }
            }
            ways = next;
        }
        ways[self.fleet]
    }

    pub fn ensure_within(&self, cap: u128) -> Result<u128> {
        let count = self.count();
        if count > cap {
            log::warn!("refusing to enumerate {count} states (cap {cap})");
            Err(Error::StateCapExceeded { count, cap })
        } else {
            Ok(count)
        }
    }

    pub fn state_from_indices(&self, idx: &[usize]) -> NetworkState {
        NetworkState {
            counts: idx
                .iter()
                .enumerate()
                .map(|(v, &k)| self.supports[v][k])
                .collect(),
        }
    }

    /// Local support indices of a state, or `None` if some node is off its
    /// support or the totals do not match.
    pub fn indices_of(&self, state: &NetworkState) -> Option<Vec<usize>> {
        if state.counts.len() != self.node_count() || state.total() != self.fleet {
            return None;
        }
        state
            .counts
            .iter()
            .enumerate()
            .map(|(v, &c)| self.local_index(v, c))
            .collect()
    }

    /// Visits every state in order, passing the local support index of each
    /// node.
    pub fn for_each(&self, mut visit: impl FnMut(&[usize])) {
        let mut idx = vec![0; self.node_count()];
        self.walk(0, self.fleet, &mut idx, &mut visit);
    }

    /// Splits the enumeration on the first node's local state and runs the
    /// pieces in parallel. Accumulators come back in enumeration order.
    pub fn par_fold<A, I, F>(&self, init: I, visit: F) -> Vec<A>
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, &[usize]) + Sync,
    {
        if self.node_count() == 0 {
            return Vec::new();
        }
        (0..self.supports[0].len())
            .into_par_iter()
            .map(|first| {
                let mut acc = init();
                let c = self.supports[0][first];
                if c.total() <= self.fleet && self.feasible[1][self.fleet - c.total()] {
                    let mut idx = vec![0; self.node_count()];
                    idx[0] = first;
                    self.walk(1, self.fleet - c.total(), &mut idx, &mut |i: &[usize]| {
                        visit(&mut acc, i)
                    });
                }
                acc
            })
            .collect()
    }

    fn walk(&self, v: usize, remaining: usize, idx: &mut [usize], visit: &mut impl FnMut(&[usize])) {
        if v == self.node_count() {
            if remaining == 0 {
                visit(idx);
            }
            return;
        }
        for (k, c) in self.supports[v].iter().enumerate() {
            let t = c.total();
            if t <= remaining && self.feasible[v + 1][remaining - t] {
                idx[v] = k;
                self.walk(v + 1, remaining - t, idx, visit);
            }
        }
    }

    /// Materializes every state, refusing above `cap`.
    pub fn states(&self, cap: u128) -> Result<Vec<NetworkState>> {
        let count = self.ensure_within(cap)?;
        let mut out = Vec::with_capacity(count as usize);
        self.for_each(|idx| out.push(self.state_from_indices(idx)));
        Ok(out)
    }
}

/// All states of Ω in enumeration order.
pub fn enumerate_states(
    config: &SystemConfig,
    topology: &Topology,
    cap: u128,
) -> Result<Vec<NetworkState>> {
    config.ensure_valid(topology)?;
    StateSpace::new(config, topology).states(cap)
}

/// Admissible `(nB0)` values at each repaired-count level `nG0 = 0..=Z` of the
/// shop, following the two-case listing: multiples of `M` on levels that are
/// multiples of `M`, shifted lattices in between.
pub fn shop_level_support(config: &SystemConfig) -> Vec<Vec<usize>> {
    let m = config.remove_batch;
    let phi = config.phi();
    (0..=config.dispatch_batch)
        .map(|g| {
            let (l, j) = (g / m, g % m);
            if j == 0 {
                (0..=phi - l).map(|h| h * m).collect()
            } else {
                (l + 1..=phi).map(|h| (h - l) * m - j).collect()
            }
        })
        .collect()
}

fn local_support(config: &SystemConfig, node: Node) -> Vec<NodeCount> {
    let k = config.fleet;
    let m = config.remove_batch;
    let phi = config.phi();
    match node {
        Node::Shop => shop_level_support(config)
            .into_iter()
            .enumerate()
            .flat_map(|(g, bs)| bs.into_iter().map(move |b| NodeCount::new(g, b)))
            .filter(|c| c.total() <= k)
            .collect(),
        Node::Region(_) => (0..=k)
            .flat_map(|g| (0..=m.min(k - g)).map(move |b| NodeCount::new(g, b)))
            .collect(),
        Node::Ride { .. } => (0..=k).map(|g| NodeCount::new(g, 0)).collect(),
        Node::Removal(_) => (0..=phi).map(|h| NodeCount::new(0, h * m)).collect(),
        Node::Return(i) => {
            let zi = config.dispatch_share(i);
            let groups = phi / config.psi();
            (0..=groups)
                .map(|l| NodeCount::new(l * zi, 0))
                .filter(|c| c.total() <= k)
                .collect()
        }
    }
}
