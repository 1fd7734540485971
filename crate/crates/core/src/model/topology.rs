use std::collections::HashMap;
use std::fmt;

use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;

use super::SystemConfig;

/// A virtual node of the closed network. Region indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Shop,
    Region(usize),
    Ride { from: usize, to: usize },
    Removal(usize),
    Return(usize),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Node::Shop => write!(f, "0"),
            Node::Region(i) => write!(f, "{}", i + 1),
            Node::Ride { from, to } => write!(f, "{}->{}", from + 1, to + 1),
            Node::Removal(i) => write!(f, "{}->0", i + 1),
            Node::Return(i) => write!(f, "0->{}", i + 1),
        }
    }
}

/// Downlink sets and the total ordering of all virtual nodes: shop, regions,
/// ride roads (`i` then `j` ascending), removal roads, return roads.
///
/// Return roads only exist for regions with a positive redistribution share.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    theta: Vec<Vec<usize>>,
    nodes: Vec<Node>,
    index: HashMap<Node, usize>,
}

impl Topology {
    pub fn new(theta: Vec<Vec<usize>>, with_return: &[bool]) -> Self {
        let n = theta.len();
        let mut theta = theta;
        for t in &mut theta {
            t.sort_unstable();
            t.dedup();
        }
        let mut nodes = vec![Node::Shop];
        nodes.extend((0..n).map(Node::Region));
        for (i, t) in theta.iter().enumerate() {
            nodes.extend(t.iter().map(|&j| Node::Ride { from: i, to: j }));
        }
        nodes.extend((0..n).map(Node::Removal));
        nodes.extend(
            (0..n)
                .filter(|&i| with_return.get(i).copied().unwrap_or(false))
                .map(Node::Return),
        );
        let index = nodes.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        Self { theta, nodes, index }
    }

    /// Builds the topology described by a configuration: `theta` when given,
    /// otherwise the positive entries of `p`.
    pub fn from_config(config: &SystemConfig) -> Self {
        let n = config.regions;
        let theta: Vec<Vec<usize>> = match &config.theta {
            Some(t) => (0..n)
                .map(|i| {
                    t.get(i)
                        .map(|row| row.iter().map(|&j| j.wrapping_sub(1)).collect())
                        .unwrap_or_default()
                })
                .collect(),
            None => (0..n)
                .map(|i| {
                    config
                        .p
                        .get(i)
                        .map(|row| {
                            row.iter()
                                .enumerate()
                                .filter(|&(j, &v)| j != i && v > 0.0)
                                .map(|(j, _)| j)
                                .collect()
                        })
                        .unwrap_or_default()
                })
                .collect(),
        };
        let with_return: Vec<bool> = (0..n)
            .map(|i| config.beta.get(i).is_some_and(|&b| b > 0.0))
            .collect();
        Self::new(theta, &with_return)
    }

    pub fn regions(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self, i: usize) -> &[usize] {
        &self.theta[i]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, k: usize) -> Node {
        self.nodes[k]
    }

    pub fn index_of(&self, node: Node) -> Option<usize> {
        self.index.get(&node).copied()
    }

    pub fn shop(&self) -> usize {
        0
    }

    pub fn region(&self, i: usize) -> usize {
        1 + i
    }

    pub fn ride(&self, from: usize, to: usize) -> Option<usize> {
        self.index_of(Node::Ride { from, to })
    }

    pub fn removal(&self, i: usize) -> usize {
        self.index[&Node::Removal(i)]
    }

    pub fn ret(&self, i: usize) -> Option<usize> {
        self.index_of(Node::Return(i))
    }

    /// Ride roads in node order as `(node index, from, to)`.
    pub fn rides(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(k, v)| match *v {
            Node::Ride { from, to } => Some((k, from, to)),
            _ => None,
        })
    }

    /// Return roads in node order as `(node index, region)`.
    pub fn returns(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(k, v)| match *v {
            Node::Return(i) => Some((k, i)),
            _ => None,
        })
    }

    /// Successors of each node in the routing structure.
    pub fn successors(&self, k: usize) -> Vec<usize> {
        match self.nodes[k] {
            Node::Shop => {
                let mut s = vec![0];
                s.extend(self.returns().map(|(idx, _)| idx));
                s
            }
            Node::Region(i) => {
                let mut s = vec![k, self.removal(i)];
                s.extend(self.theta[i].iter().filter_map(|&j| self.ride(i, j)));
                s
            }
            Node::Ride { to, .. } => vec![self.region(to)],
            Node::Removal(_) => vec![0],
            Node::Return(i) => vec![self.region(i)],
        }
    }

    /// Whether the directed node graph is strongly connected.
    pub fn is_path_irreducible(&self) -> bool {
        let n = self.regions();
        if self.theta.iter().flatten().any(|&j| j >= n) {
            return false;
        }
        let mut g = DiGraph::<(), ()>::new();
        let ids: Vec<_> = (0..self.node_count()).map(|_| g.add_node(())).collect();
        for k in 0..self.node_count() {
            for s in self.successors(k) {
                g.add_edge(ids[k], ids[s], ());
            }
        }
        kosaraju_scc(&g).len() == 1
    }
}
