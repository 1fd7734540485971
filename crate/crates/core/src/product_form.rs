//! Product-form joint law over Ω: node factors from the solved node chains
//! and Poisson-type road factors, normalized by `C`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{NetworkState, Node, NodeCount, StateSpace, SystemConfig, Topology};
use crate::routing::{solve_nodes, NodeSolutions, RelativeRates};

/// Running sum of `exp(x)` over log-weights, kept relative to the largest
/// term seen so far, with Neumaier compensation.
#[derive(Debug, Clone, Copy)]
pub struct LogSum {
    max: f64,
    sum: f64,
    comp: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            comp: 0.0,
        }
    }
}

impl LogSum {
    pub fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            let scale = (self.max - x).exp();
            self.sum *= scale;
            self.comp *= scale;
            self.max = x;
        }
        let term = (x - self.max).exp();
        let t = self.sum + term;
        if self.sum.abs() >= term.abs() {
            self.comp += (self.sum - t) + term;
        } else {
            self.comp += (term - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            let scale = (self.max - other.max).exp();
            self.sum *= scale;
            self.comp *= scale;
            self.max = other.max;
        }
        let scale = (other.max - self.max).exp();
        let term = (other.sum + other.comp) * scale;
        let t = self.sum + term;
        if self.sum.abs() >= term.abs() {
            self.comp += (self.sum - t) + term;
        } else {
            self.comp += (term - t) + self.sum;
        }
        self.sum = t;
    }

    /// `ln(sum exp(x))`.
    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + (self.sum + self.comp).ln()
        }
    }
}

/// Weights by bike count, `actual[t] = v[t] * exp(log_scale)`.
#[derive(Debug, Clone, PartialEq)]
struct Scaled {
    v: Vec<f64>,
    log_scale: f64,
}

impl Scaled {
    fn unit(fleet: usize) -> Self {
        let mut v = vec![0.0; fleet + 1];
        v[0] = 1.0;
        Self { v, log_scale: 0.0 }
    }

    fn from_logs(fleet: usize, entries: impl Iterator<Item = (usize, f64)>) -> Self {
        let entries: Vec<_> = entries.filter(|&(t, _)| t <= fleet).collect();
        let top = entries
            .iter()
            .map(|&(_, x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut v = vec![0.0; fleet + 1];
        if top == f64::NEG_INFINITY {
            return Self { v, log_scale: 0.0 };
        }
        for (t, x) in entries {
            v[t] += (x - top).exp();
        }
        Self { v, log_scale: top }
    }

    fn convolve(&self, other: &Scaled) -> Scaled {
        let n = self.v.len();
        let mut v = vec![0.0; n];
        for (a, &x) in self.v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (b, &y) in other.v[..n - a].iter().enumerate() {
                v[a + b] += x * y;
            }
        }
        let top = v.iter().cloned().fold(0.0, f64::max);
        let mut log_scale = self.log_scale + other.log_scale;
        if top > 0.0 {
            v.iter_mut().for_each(|x| *x /= top);
            log_scale += top.ln();
        }
        Scaled { v, log_scale }
    }

    fn log_at(&self, t: usize) -> f64 {
        self.v[t].ln() + self.log_scale
    }
}

/// `ln((e / mu)^m / m!)`, with `0^0 = 1`.
fn log_poisson_factor(e: f64, mu: f64, m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let mut out = m as f64 * (e / mu).ln();
    for j in 2..=m {
        out -= (j as f64).ln();
    }
    out
}

/// One marginal probability request. Region indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalQuery {
    Region { i: usize, good: usize, bad: usize },
    Shop { good: usize, bad: usize },
    Ride { from: usize, to: usize, m: usize },
    Removal { i: usize, m: usize },
    Return { i: usize, m: usize },
}

impl MarginalQuery {
    fn resolve(&self, topology: &Topology) -> Result<(usize, NodeCount)> {
        let n = topology.regions();
        let bad_region = |i: usize| {
            Error::MalformedQuery(format!("region {} outside 1..={n}", i + 1))
        };
        Ok(match *self {
            MarginalQuery::Region { i, good, bad } => {
                if i >= n {
                    return Err(bad_region(i));
                }
                (topology.region(i), NodeCount::new(good, bad))
            }
            MarginalQuery::Shop { good, bad } => (topology.shop(), NodeCount::new(good, bad)),
            MarginalQuery::Ride { from, to, m } => {
                let k = topology.ride(from, to).ok_or_else(|| {
                    Error::MalformedQuery(format!("no road {}->{}", from + 1, to + 1))
                })?;
                (k, NodeCount::new(m, 0))
            }
            MarginalQuery::Removal { i, m } => {
                if i >= n {
                    return Err(bad_region(i));
                }
                (topology.removal(i), NodeCount::new(0, m))
            }
            MarginalQuery::Return { i, m } => {
                let k = topology
                    .ret(i)
                    .ok_or_else(|| Error::MalformedQuery(format!("no road 0->{}", i + 1)))?;
                (k, NodeCount::new(m, 0))
            }
        })
    }
}

/// The normalized product-form law.
#[derive(Debug, Clone)]
pub struct ProductFormSolution {
    topology: Topology,
    space: StateSpace,
    rates: RelativeRates,
    nodes: NodeSolutions,
    /// `log_h[v][k]` is the log factor of node `v` in local state `k`.
    log_h: Vec<Vec<f64>>,
    log_c: f64,
    /// Convolution of every node except `v`, by bike count.
    others: Vec<Scaled>,
    log_c_convolution: f64,
}

impl ProductFormSolution {
    /// Solves the node chains at `rates` and enumerates Ω for `C`.
    pub fn from_rates(
        config: &SystemConfig,
        topology: &Topology,
        rates: &RelativeRates,
        cap: u128,
    ) -> Result<Self> {
        let nodes = solve_nodes(config, topology, rates.values())?;
        Self::new(config, topology, rates, nodes, cap)
    }

    /// `C` by enumerating Ω, refusing when Ω has more than `cap` states.
    pub fn new(
        config: &SystemConfig,
        topology: &Topology,
        rates: &RelativeRates,
        nodes: NodeSolutions,
        cap: u128,
    ) -> Result<Self> {
        Self::build(config, topology, rates, nodes, Some(cap))
    }

    /// `C` by convolution only; Ω is never enumerated, so there is no state
    /// cap. Node marginals are exact, slice sums still enumerate.
    pub fn by_convolution(
        config: &SystemConfig,
        topology: &Topology,
        rates: &RelativeRates,
        nodes: NodeSolutions,
    ) -> Result<Self> {
        Self::build(config, topology, rates, nodes, None)
    }

    fn build(
        config: &SystemConfig,
        topology: &Topology,
        rates: &RelativeRates,
        nodes: NodeSolutions,
        cap: Option<u128>,
    ) -> Result<Self> {
        let space = StateSpace::new(config, topology);
        if let Some(cap) = cap {
            space.ensure_within(cap)?;
        }
        let log_h: Vec<Vec<f64>> = (0..topology.node_count())
            .map(|v| {
                let e = rates.node(v);
                space
                    .support(v)
                    .iter()
                    .map(|c| match topology.node(v) {
                        Node::Shop => nodes.shop.prob(c.good, c.bad).ln(),
                        Node::Region(i) => nodes.regions[i].prob(c.good, c.bad).ln(),
                        Node::Ride { from, to } => {
                            log_poisson_factor(e, config.mu_ride[from][to], c.good)
                        }
                        Node::Removal(i) => log_poisson_factor(e, config.mu_remove[i], c.bad),
                        Node::Return(i) => log_poisson_factor(e, config.mu_return[i], c.good),
                    })
                    .collect()
            })
            .collect();

        let fleet = config.fleet;
        let per_node: Vec<Scaled> = (0..topology.node_count())
            .map(|v| {
                Scaled::from_logs(
                    fleet,
                    space
                        .support(v)
                        .iter()
                        .zip(&log_h[v])
                        .map(|(c, &x)| (c.total(), x)),
                )
            })
            .collect();
        let n = per_node.len();
        let mut prefix = vec![Scaled::unit(fleet)];
        for s in &per_node {
            prefix.push(prefix.last().unwrap().convolve(s));
        }
        let mut suffix = vec![Scaled::unit(fleet); n + 1];
        for v in (0..n).rev() {
            suffix[v] = suffix[v + 1].convolve(&per_node[v]);
        }
        let others = (0..n).map(|v| prefix[v].convolve(&suffix[v + 1])).collect();
        let log_c_convolution = prefix[n].log_at(fleet);

        let log_c = if cap.is_some() {
            let partial = space.par_fold(LogSum::default, |acc, idx| {
                acc.add(idx.iter().enumerate().map(|(v, &k)| log_h[v][k]).sum());
            });
            let mut total = LogSum::default();
            for p in &partial {
                total.merge(p);
            }
            total.value()
        } else {
            log_c_convolution
        };
        if !log_c.is_finite() {
            return Err(Error::InvalidGenerator(
                "every state of the network has zero weight".into(),
            ));
        }
        Ok(Self {
            topology: topology.clone(),
            space,
            rates: rates.clone(),
            nodes,
            log_h,
            log_c,
            others,
            log_c_convolution,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn rates(&self) -> &RelativeRates {
        &self.rates
    }

    pub fn nodes(&self) -> &NodeSolutions {
        &self.nodes
    }

    /// `ln C`, from enumerating Ω unless built [`by_convolution`](Self::by_convolution).
    pub fn log_normalization_constant(&self) -> f64 {
        self.log_c
    }

    pub fn normalization_constant(&self) -> f64 {
        self.log_c.exp()
    }

    /// `ln C` from convolving per-node weights by bike count.
    pub fn log_normalization_constant_by_convolution(&self) -> f64 {
        self.log_c_convolution
    }

    /// Log of the unnormalized product at local support indices.
    pub fn log_weight(&self, idx: &[usize]) -> f64 {
        idx.iter().enumerate().map(|(v, &k)| self.log_h[v][k]).sum()
    }

    /// Unnormalized log factor of node `v` holding `count`, if admissible.
    pub fn log_factor(&self, v: usize, count: NodeCount) -> Option<f64> {
        self.space.local_index(v, count).map(|k| self.log_h[v][k])
    }

    pub fn joint_probability(&self, state: &NetworkState) -> Result<f64> {
        let idx = self
            .space
            .indices_of(state)
            .ok_or_else(|| Error::StateNotInSpace(state.to_string()))?;
        Ok((self.log_weight(&idx) - self.log_c).exp())
    }

    /// Probability that node `v` holds `count`: its factor times the
    /// weight of the remaining nodes sharing the other bikes, over `C`.
    pub fn node_probability(&self, v: usize, count: NodeCount) -> f64 {
        let Some(log_h) = self.log_factor(v, count) else {
            return 0.0;
        };
        let fleet = self.space.fleet();
        if count.total() > fleet {
            return 0.0;
        }
        (log_h + self.others[v].log_at(fleet - count.total()) - self.log_c).exp()
    }

    /// Marginal law of node `v` over its local support, in support order.
    pub fn node_marginal(&self, v: usize) -> Vec<(NodeCount, f64)> {
        self.space
            .support(v)
            .iter()
            .map(|&c| (c, self.node_probability(v, c)))
            .collect()
    }

    pub fn marginal(&self, query: &MarginalQuery) -> Result<f64> {
        let (v, count) = query.resolve(&self.topology)?;
        Ok(self.node_probability(v, count))
    }

    /// The same marginal as a direct sum over the matching slice of Ω.
    pub fn marginal_by_slice(&self, query: &MarginalQuery) -> Result<f64> {
        let (v, count) = query.resolve(&self.topology)?;
        let Some(k) = self.space.local_index(v, count) else {
            return Ok(0.0);
        };
        let parts = self.space.par_fold(LogSum::default, |acc, idx| {
            if idx[v] == k {
                acc.add(self.log_weight(idx));
            }
        });
        let mut total = LogSum::default();
        for p in &parts {
            total.merge(p);
        }
        Ok((total.value() - self.log_c).exp())
    }

    /// Every node marginal from one pass over Ω: `out[v][k]` is the
    /// probability of local state `k` at node `v`.
    pub fn node_marginals_by_enumeration(&self) -> Vec<Vec<f64>> {
        let shape: Vec<usize> = (0..self.space.node_count())
            .map(|v| self.space.support(v).len())
            .collect();
        let parts = self.space.par_fold(
            || shape.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>(),
            |acc, idx| {
                let p = (self.log_weight(idx) - self.log_c).exp();
                for (v, &k) in idx.iter().enumerate() {
                    acc[v][k] += p;
                }
            },
        );
        let mut out: Vec<Vec<f64>> = shape.iter().map(|&n| vec![0.0; n]).collect();
        for part in parts {
            for (o, p) in out.iter_mut().zip(part) {
                o.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            }
        }
        out
    }

    /// Plain sum of `pi(n)` over Ω.
    pub fn total_probability(&self) -> f64 {
        self.space
            .par_fold(|| 0.0, |acc, idx| *acc += (self.log_weight(idx) - self.log_c).exp())
            .into_par_iter()
            .sum()
    }

    /// Writes `node,good,bad,probability` for every node marginal.
    pub fn write_marginals_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "node,good,bad,probability")?;
        for v in 0..self.topology.node_count() {
            let node = self.topology.node(v);
            for (c, p) in self.node_marginal(v) {
                writeln!(out, "{node},{},{},{p:.12e}", c.good, c.bad)?;
            }
        }
        Ok(())
    }
}
