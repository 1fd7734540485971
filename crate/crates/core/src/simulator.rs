//! Event-by-event simulation of the physical network, and the same
//! transition rules assembled into an explicit generator for small
//! instances.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov_core::null_vector;
use crate::measures::{measures_from_marginals, MeasureReport};
use crate::model::{omega_contains, NetworkState, NodeCount, SystemConfig, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    pub replications: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 1e5,
            warmup: 1e3,
            seed: 1,
            replications: 20,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.warmup >= 0.0 && self.horizon > self.warmup) {
            return Err(Error::InvalidSimConfig(format!(
                "need horizon > warmup >= 0, got horizon {} and warmup {}",
                self.horizon, self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidSimConfig("need at least one replication".into()));
        }
        Ok(())
    }
}

/// A state change of the physical system. Region indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// A user at `region` takes a usable bike towards `to`.
    Rent { region: usize, to: usize },
    /// A user finds no usable bike and leaves.
    Lost { region: usize },
    RideEnd { from: usize, to: usize },
    /// A parked usable bike fails; at `M` unusable bikes the batch leaves.
    Failure { region: usize },
    /// A removal truck from `region` reaches the shop.
    RemovalArrive { region: usize },
    /// A repair completes; at `Z` repaired bikes the batch is dispatched.
    Repair,
    /// A redistribution truck reaches `region`.
    ReturnArrive { region: usize },
}

/// Every event possible from `state` with its rate. Lost users are listed
/// only when `with_lost` is set since they do not change the state.
pub fn enabled_events(
    config: &SystemConfig,
    topology: &Topology,
    state: &NetworkState,
    with_lost: bool,
) -> Vec<(Event, f64)> {
    let mut out = Vec::new();
    for i in 0..config.regions {
        let c = state.counts[topology.region(i)];
        if c.good > 0 {
            for &j in topology.theta(i) {
                let rate = config.lambda[i] * config.p[i][j];
                if rate > 0.0 {
                    out.push((Event::Rent { region: i, to: j }, rate));
                }
            }
            if config.alpha > 0.0 {
                out.push((Event::Failure { region: i }, c.good as f64 * config.alpha));
            }
        } else if with_lost {
            out.push((Event::Lost { region: i }, config.lambda[i]));
        }
        let removing = state.counts[topology.removal(i)].bad / config.remove_batch;
        if removing > 0 {
            out.push((
                Event::RemovalArrive { region: i },
                removing as f64 * config.mu_remove[i],
            ));
        }
    }
    for (k, from, to) in topology.rides() {
        let m = state.counts[k].good;
        if m > 0 {
            out.push((Event::RideEnd { from, to }, m as f64 * config.mu_ride[from][to]));
        }
    }
    let shop = state.shop();
    if shop.bad > 0 && shop.good < config.dispatch_batch {
        out.push((Event::Repair, config.repair_rate(shop.bad)));
    }
    for (k, i) in topology.returns() {
        let groups = state.counts[k].good / config.dispatch_share(i);
        if groups > 0 {
            out.push((
                Event::ReturnArrive { region: i },
                groups as f64 * config.mu_return[i],
            ));
        }
    }
    out
}

/// Applies `event` to `state` in place, including any batch trigger it
/// causes.
pub fn apply_event(config: &SystemConfig, topology: &Topology, state: &mut NetworkState, event: Event) {
    let c = &mut state.counts;
    match event {
        Event::Rent { region, to } => {
            c[topology.region(region)].good -= 1;
            c[topology.ride(region, to).expect("ride road")].good += 1;
        }
        Event::Lost { .. } => {}
        Event::RideEnd { from, to } => {
            c[topology.ride(from, to).expect("ride road")].good -= 1;
            c[topology.region(to)].good += 1;
        }
        Event::Failure { region } => {
            let r = topology.region(region);
            c[r].good -= 1;
            c[r].bad += 1;
            if c[r].bad == config.remove_batch {
                c[r].bad = 0;
                c[topology.removal(region)].bad += config.remove_batch;
            }
        }
        Event::RemovalArrive { region } => {
            c[topology.removal(region)].bad -= config.remove_batch;
            c[topology.shop()].bad += config.remove_batch;
        }
        Event::Repair => {
            let s = topology.shop();
            c[s].bad -= 1;
            c[s].good += 1;
            if c[s].good == config.dispatch_batch {
                c[s].good = 0;
                for (k, i) in topology.returns() {
                    c[k].good += config.dispatch_share(i);
                }
            }
        }
        Event::ReturnArrive { region } => {
            let k = topology.ret(region).expect("return road");
            c[k].good -= config.dispatch_share(region);
            c[topology.region(region)].good += config.dispatch_share(region);
        }
    }
}

/// All bikes usable and parked, spread over the regions as evenly as
/// possible.
pub fn initial_state(config: &SystemConfig, topology: &Topology) -> NetworkState {
    let mut s = NetworkState::empty(topology);
    for b in 0..config.fleet {
        s.counts[topology.region(b % config.regions)].good += 1;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of the mean across replications.
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self { mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }

    /// `|mean - target| / se`, infinite when `se = 0` and the values differ.
    pub fn z_score(&self, target: f64) -> f64 {
        let gap = (self.mean - target).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.se
        }
    }
}

/// One replication's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    /// Time fraction of each local state, per node.
    pub occupancy: Vec<BTreeMap<NodeCount, f64>>,
    pub measures: MeasureReport,
    pub events: u64,
    pub lost_users: u64,
    pub arrivals: u64,
    pub conservation_violations: u64,
    pub illegal_states: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimates {
    pub replications: Vec<Replication>,
    /// `marginals[v]`: `(count, time fraction)` over all counts seen at node `v`.
    pub marginals: Vec<Vec<(NodeCount, Estimate)>>,
    pub eta: Estimate,
    pub xi: Estimate,
    pub f_a: Estimate,
    pub gamma1: Estimate,
    pub gamma2: Estimate,
    /// Fraction of user arrivals that found no usable bike.
    pub lost_fraction: Estimate,
    pub conservation_violations: u64,
    pub illegal_states: u64,
}

impl SimEstimates {
    pub fn probability(&self, node: usize, count: NodeCount) -> Estimate {
        let xs: Vec<f64> = self
            .replications
            .iter()
            .map(|r| r.occupancy[node].get(&count).copied().unwrap_or(0.0))
            .collect();
        Estimate::from_samples(&xs)
    }

    pub fn write_measures_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "measure,mean,se")?;
        for (name, e) in [
            ("eta", self.eta),
            ("xi", self.xi),
            ("F_A", self.f_a),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("lost_fraction", self.lost_fraction),
        ] {
            writeln!(out, "{name},{:.12e},{:.12e}", e.mean, e.se)?;
        }
        Ok(())
    }

    /// Occupancy histograms: `node,good,bad,mean,se`.
    pub fn write_histograms_csv(&self, topology: &Topology, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "node,good,bad,mean,se")?;
        for (v, law) in self.marginals.iter().enumerate() {
            let node = topology.node(v);
            for (c, e) in law {
                writeln!(out, "{node},{},{},{:.12e},{:.12e}", c.good, c.bad, e.mean, e.se)?;
            }
        }
        Ok(())
    }
}

fn run_replication(
    config: &SystemConfig,
    topology: &Topology,
    sim: &SimConfig,
    stream: u64,
) -> Replication {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(stream);
    let n = topology.node_count();
    let mut state = initial_state(config, topology);
    let mut time_in: Vec<BTreeMap<NodeCount, f64>> = vec![BTreeMap::new(); n];
    let mut since = vec![sim.warmup; n];
    let mut t = 0.0;
    let (mut events, mut lost, mut arrivals, mut violations, mut illegal) = (0, 0, 0, 0, 0);
    let mut prev = state.clone();
    loop {
        let enabled = enabled_events(config, topology, &state, true);
        let total: f64 = enabled.iter().map(|(_, r)| r).sum();
        if total <= 0.0 {
            break;
        }
        let dt: f64 = rng.sample::<f64, _>(Exp1) / total;
        let next_t = t + dt;
        if next_t >= sim.horizon {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut chosen = enabled[enabled.len() - 1].0;
        for &(ev, rate) in &enabled {
            if u < rate {
                chosen = ev;
                break;
            }
            u -= rate;
        }
        t = next_t;
        events += 1;
        match chosen {
            Event::Lost { .. } => {
                arrivals += 1;
                lost += 1;
                continue;
            }
            Event::Rent { .. } => arrivals += 1,
            _ => {}
        }
        prev.counts.copy_from_slice(&state.counts);
        apply_event(config, topology, &mut state, chosen);
        if state.total() != config.fleet {
            violations += 1;
        }
        if !omega_contains(config, topology, &state) {
            illegal += 1;
        }
        if t > sim.warmup {
            for v in 0..n {
                if prev.counts[v] != state.counts[v] {
                    *time_in[v].entry(prev.counts[v]).or_insert(0.0) += t - since[v];
                    since[v] = t;
                }
            }
        }
    }
    let span = sim.horizon - sim.warmup;
    for v in 0..n {
        *time_in[v].entry(state.counts[v]).or_insert(0.0) += sim.horizon - since[v];
    }
    for law in &mut time_in {
        law.values_mut().for_each(|x| *x /= span);
    }
    let marginals: Vec<Vec<(NodeCount, f64)>> = time_in
        .iter()
        .map(|m| m.iter().map(|(&c, &p)| (c, p)).collect())
        .collect();
    let measures = measures_from_marginals(config, topology, &marginals);
    Replication {
        occupancy: time_in,
        measures,
        events,
        lost_users: lost,
        arrivals,
        conservation_violations: violations,
        illegal_states: illegal,
    }
}

/// Runs `sim.replications` independent replications in parallel. Replication
/// `r` uses stream `r` of a generator seeded with `sim.seed`, so results
/// do not depend on scheduling.
pub fn simulate(config: &SystemConfig, topology: &Topology, sim: &SimConfig) -> Result<SimEstimates> {
    config.ensure_valid(topology)?;
    sim.validate()?;
    let replications: Vec<Replication> = (0..sim.replications as u64)
        .into_par_iter()
        .map(|r| run_replication(config, topology, sim, r))
        .collect();
    let pick = |f: fn(&Replication) -> f64| {
        Estimate::from_samples(&replications.iter().map(f).collect::<Vec<_>>())
    };
    let eta = pick(|r| r.measures.eta);
    let xi = pick(|r| r.measures.xi);
    let f_a = pick(|r| r.measures.f_a);
    let gamma1 = pick(|r| r.measures.gamma1);
    let gamma2 = pick(|r| r.measures.gamma2);
    let lost_fraction = pick(|r| {
        if r.arrivals == 0 {
            0.0
        } else {
            r.lost_users as f64 / r.arrivals as f64
        }
    });
    let mut out = SimEstimates {
        marginals: Vec::new(),
        eta,
        xi,
        f_a,
        gamma1,
        gamma2,
        lost_fraction,
        conservation_violations: replications.iter().map(|r| r.conservation_violations).sum(),
        illegal_states: replications.iter().map(|r| r.illegal_states).sum(),
        replications,
    };
    out.marginals = (0..topology.node_count())
        .map(|v| {
            let counts: std::collections::BTreeSet<NodeCount> = out
                .replications
                .iter()
                .flat_map(|r| r.occupancy[v].keys().copied())
                .collect();
            counts
                .into_iter()
                .map(|c| (c, out.probability(v, c)))
                .collect()
        })
        .collect();
    Ok(out)
}

/// The full network chain on the states reachable from [`initial_state`].
#[derive(Debug, Clone)]
pub struct ExactChain {
    states: Vec<NetworkState>,
    generator: DMatrix<f64>,
}

impl ExactChain {
    pub fn build(config: &SystemConfig, topology: &Topology, cap: usize) -> Result<Self> {
        config.ensure_valid(topology)?;
        let start = initial_state(config, topology);
        let mut index: HashMap<NetworkState, usize> = HashMap::new();
        let mut states = vec![start.clone()];
        index.insert(start, 0);
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        let mut queue = VecDeque::from([0usize]);
        while let Some(k) = queue.pop_front() {
            let from = states[k].clone();
            for (ev, rate) in enabled_events(config, topology, &from, false) {
                let mut to = from.clone();
                apply_event(config, topology, &mut to, ev);
                let j = match index.get(&to) {
                    Some(&j) => j,
                    None => {
                        if states.len() >= cap {
                            return Err(Error::StateCapExceeded {
                                count: states.len() as u128 + 1,
                                cap: cap as u128,
                            });
                        }
                        let j = states.len();
                        index.insert(to.clone(), j);
                        states.push(to);
                        queue.push_back(j);
                        j
                    }
                };
                if j != k {
                    edges.push((k, j, rate));
                }
            }
        }
        let n = states.len();
        let mut generator = DMatrix::zeros(n, n);
        for (i, j, r) in edges {
            generator[(i, j)] += r;
            generator[(i, i)] -= r;
        }
        Ok(Self { states, generator })
    }

    pub fn states(&self) -> &[NetworkState] {
        &self.states
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// Dense stationary law, aligned with [`states`](Self::states).
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let x = null_vector(&self.generator).ok_or_else(|| {
            Error::NotIrreducible("the reachable network chain has no unique stationary law".into())
        })?;
        Ok(x.iter().map(|&p| if p < 0.0 && p > -1e-12 { 0.0 } else { p }).collect())
    }
}
