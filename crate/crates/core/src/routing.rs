//! State-dependent routing matrix and the fixed point `e = e P(e)` for the
//! relative arrival rates.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Node, SystemConfig, Topology};
use crate::region_chain::{solve_region, RegionSolution};
use crate::shop_chain::{solve_shop, ShopSolution};

/// Row clamps larger than this are logged.
const CLAMP_WARN: f64 = 1e-8;

/// One relative arrival rate per node, in topology order.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeRates {
    topology: Topology,
    values: Vec<f64>,
}

impl RelativeRates {
    pub fn new(topology: &Topology, values: Vec<f64>) -> Result<Self> {
        if values.len() != topology.node_count() {
            return Err(Error::InvalidGenerator(format!(
                "expected {} relative rates, found {}",
                topology.node_count(),
                values.len()
            )));
        }
        Ok(Self {
            topology: topology.clone(),
            values,
        })
    }

    pub fn ones(topology: &Topology) -> Self {
        Self {
            topology: topology.clone(),
            values: vec![1.0; topology.node_count()],
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn shop(&self) -> f64 {
        self.values[self.topology.shop()]
    }

    pub fn region(&self, i: usize) -> f64 {
        self.values[self.topology.region(i)]
    }

    pub fn ride(&self, from: usize, to: usize) -> Option<f64> {
        self.topology.ride(from, to).map(|k| self.values[k])
    }

    pub fn removal(&self, i: usize) -> f64 {
        self.values[self.topology.removal(i)]
    }

    pub fn ret(&self, i: usize) -> Option<f64> {
        self.topology.ret(i).map(|k| self.values[k])
    }

    /// Writes `node,e` rows.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "node,e")?;
        for (node, e) in self.topology.nodes().iter().zip(&self.values) {
            writeln!(out, "{node},{e:.12e}")?;
        }
        Ok(())
    }
}

/// Row-stochastic routing matrix over the topology nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingMatrix {
    pub matrix: DMatrix<f64>,
}

impl RoutingMatrix {
    pub fn max_row_error(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `e P`.
    pub fn apply(&self, e: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(e);
        (v.transpose() * &self.matrix).iter().copied().collect()
    }
}

/// Node laws at a given rate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSolutions {
    pub regions: Vec<RegionSolution>,
    pub shop: ShopSolution,
}

/// Solves every region and the shop at the rates `e`, regions in parallel.
pub fn solve_nodes(config: &SystemConfig, topology: &Topology, e: &[f64]) -> Result<NodeSolutions> {
    let regions = (0..config.regions)
        .into_par_iter()
        .map(|i| solve_region(config, i, e[topology.region(i)]))
        .collect::<Result<Vec<_>>>()?;
    let shop = solve_shop(config, e[topology.shop()])?;
    Ok(NodeSolutions { regions, shop })
}

fn clamp_row(row: &mut [f64], label: &str) {
    let mut clamped = 0.0_f64;
    for x in row.iter_mut() {
        if *x < 0.0 {
            clamped = clamped.max(-*x);
            *x = 0.0;
        }
    }
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        row.iter_mut().for_each(|x| *x /= s);
    }
    if clamped > CLAMP_WARN {
        log::warn!("routing row {label}: clamped negative entry of size {clamped:e}");
    }
}

/// Routing matrix from solved node laws.
pub fn build_routing_matrix(
    config: &SystemConfig,
    topology: &Topology,
    nodes: &NodeSolutions,
) -> RoutingMatrix {
    let n = topology.node_count();
    let mut p = DMatrix::zeros(n, n);
    let shop = topology.shop();

    let dispatch = nodes.shop.full_batch_prob();
    let mut row = vec![0.0; n];
    row[shop] = 1.0 - dispatch;
    for (k, i) in topology.returns() {
        row[k] = dispatch * config.beta[i];
    }
    clamp_row(&mut row, "0");
    p.row_mut(shop).copy_from_slice(&row);

    for (i, sol) in nodes.regions.iter().enumerate() {
        let mut row = vec![0.0; n];
        let q_remove = sol.full_batch_prob();
        let q_stay = sol.empty_good_prob();
        let q_ride = 1.0 - q_remove - q_stay;
        row[topology.region(i)] = q_stay;
        row[topology.removal(i)] = q_remove;
        for &j in topology.theta(i) {
            let k = topology.ride(i, j).expect("ride road exists for downlink");
            row[k] = q_ride * config.p[i][j];
        }
        clamp_row(&mut row, &(i + 1).to_string());
        p.row_mut(topology.region(i)).copy_from_slice(&row);
    }
    for k in 0..n {
        let to = match topology.node(k) {
            Node::Shop | Node::Region(_) => continue,
            Node::Ride { to, .. } => topology.region(to),
            Node::Removal(_) => shop,
            Node::Return(i) => topology.region(i),
        };
        p[(k, to)] = 1.0;
    }
    RoutingMatrix { matrix: p }
}

/// Anything that yields a routing matrix for a rate vector.
pub trait RoutingModel: Sync {
    fn node_count(&self) -> usize;
    fn routing_matrix(&self, e: &[f64]) -> Result<RoutingMatrix>;
}

/// The bike-sharing network: every evaluation re-solves all node chains.
#[derive(Debug, Clone)]
pub struct NetworkRouting<'a> {
    pub config: &'a SystemConfig,
    pub topology: &'a Topology,
}

impl<'a> NetworkRouting<'a> {
    pub fn new(config: &'a SystemConfig, topology: &'a Topology) -> Self {
        Self { config, topology }
    }
}

impl RoutingModel for NetworkRouting<'_> {
    fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    fn routing_matrix(&self, e: &[f64]) -> Result<RoutingMatrix> {
        let nodes = solve_nodes(self.config, self.topology, e)?;
        Ok(build_routing_matrix(self.config, self.topology, &nodes))
    }
}

/// How the scale of `e` is pinned after each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Entries sum to the number of nodes, the mass of the all-ones start.
    #[default]
    TotalMass,
    /// The first region's rate is 1.
    FirstRegion,
}

impl Normalization {
    pub fn apply(self, e: &mut [f64], topology_first_region: usize) {
        let scale = match self {
            Normalization::TotalMass => e.len() as f64 / e.iter().sum::<f64>(),
            Normalization::FirstRegion => 1.0 / e[topology_first_region],
        };
        if scale.is_finite() && scale > 0.0 {
            e.iter_mut().for_each(|x| *x *= scale);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointOptions {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub normalization: Normalization,
    /// Initial damping weight on the new iterate.
    pub theta: f64,
    pub min_theta: f64,
    /// Width of the window watched for residual increases.
    pub window: usize,
    /// Residual increases within a window that trigger halving `theta`.
    pub max_increases: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-10,
            max_iterations: 10_000,
            normalization: Normalization::TotalMass,
            theta: 1.0,
            min_theta: 1.0 / 64.0,
            window: 50,
            max_increases: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `|| normalize(e P(e)) - e ||_2` at the iterate entering this step.
    pub residual: f64,
    pub theta: f64,
    /// Iterate after this step.
    pub e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    pub labels: Vec<String>,
    pub records: Vec<IterationRecord>,
    /// `(iteration, new theta)` whenever damping was tightened.
    pub damping: Vec<(usize, f64)>,
    pub converged: bool,
}

impl IterationTrace {
    pub fn last_residual(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.residual)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        write!(out, "iteration,residual,theta")?;
        for l in &self.labels {
            write!(out, ",e[{l}]")?;
        }
        writeln!(out)?;
        for r in &self.records {
            write!(out, "{},{:.6e},{}", r.iteration, r.residual, r.theta)?;
            for x in &r.e {
                write!(out, ",{x:.12e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Iterates `e <- (1 - theta) e + theta normalize(e P(e))` from `init`.
///
/// `anchor` is the index used by [`Normalization::FirstRegion`].
pub fn iterate_fixed_point(
    model: &impl RoutingModel,
    init: &[f64],
    anchor: usize,
    labels: Vec<String>,
    options: &FixedPointOptions,
) -> Result<(Vec<f64>, IterationTrace)> {
    if init.len() != model.node_count() || init.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidRate {
            name: "e_init".into(),
            value: init.iter().cloned().fold(f64::INFINITY, f64::min),
        });
    }
    let mut e = init.to_vec();
    options.normalization.apply(&mut e, anchor);
    let mut trace = IterationTrace {
        labels,
        ..Default::default()
    };
    let mut theta = options.theta;
    let mut increases: Vec<usize> = Vec::new();
    for iteration in 1..=options.max_iterations {
        let p = model.routing_matrix(&e)?;
        let mut next = p.apply(&e);
        options.normalization.apply(&mut next, anchor);
        let residual = distance(&next, &e);
        if !residual.is_finite() {
            break;
        }
        if residual > trace.last_residual() && iteration > 1 {
            increases.push(iteration);
        }
        increases.retain(|&it| it + options.window > iteration);
        if increases.len() >= options.max_increases && theta > options.min_theta {
            theta = (theta / 2.0).max(options.min_theta);
            trace.damping.push((iteration, theta));
            log::info!("fixed point: damping tightened to {theta} at iteration {iteration}");
            increases.clear();
        }
        if residual < options.epsilon {
            trace.records.push(IterationRecord {
                iteration,
                residual,
                theta,
                e: e.clone(),
            });
            trace.converged = true;
            return Ok((e, trace));
        }
        for (x, y) in e.iter_mut().zip(&next) {
            *x = (1.0 - theta) * *x + theta * y;
        }
        options.normalization.apply(&mut e, anchor);
        trace.records.push(IterationRecord {
            iteration,
            residual,
            theta,
            e: e.clone(),
        });
    }
    let residual = trace.last_residual();
    Err(Error::NotConverged {
        iterations: trace.records.len(),
        residual,
        trace: Box::new(trace),
    })
}

fn labels(topology: &Topology) -> Vec<String> {
    topology.nodes().iter().map(|n| n.to_string()).collect()
}

/// Default starting vector: all ones, with the shop, removal and return
/// nodes zeroed when bikes never fail.
pub fn default_initial_rates(config: &SystemConfig, topology: &Topology) -> RelativeRates {
    let mut e = RelativeRates::ones(topology);
    if config.alpha == 0.0 {
        for (k, node) in topology.nodes().iter().enumerate() {
            if matches!(node, Node::Shop | Node::Removal(_) | Node::Return(_)) {
                e.values[k] = 0.0;
            }
        }
    }
    e
}

/// Solves `e = e P(e)` for the network, starting from `init`.
pub fn solve_relative_rates(
    config: &SystemConfig,
    topology: &Topology,
    init: &RelativeRates,
    options: &FixedPointOptions,
) -> Result<(RelativeRates, IterationTrace)> {
    config.ensure_valid(topology)?;
    let model = NetworkRouting::new(config, topology);
    let anchor = topology.region(0);
    if config.alpha == 0.0 {
        return solve_failure_free(&model, init, anchor, labels(topology), options)
            .map(|(e, t)| (RelativeRates::new(topology, e).expect("sized"), t));
    }
    let (e, trace) = iterate_fixed_point(&model, &init.values, anchor, labels(topology), options)?;
    Ok((RelativeRates::new(topology, e)?, trace))
}

/// Without failures the shop and truck roads carry no flow; positivity is
/// only required on the ride cycle.
fn solve_failure_free(
    model: &NetworkRouting<'_>,
    init: &RelativeRates,
    anchor: usize,
    labels: Vec<String>,
    options: &FixedPointOptions,
) -> Result<(Vec<f64>, IterationTrace)> {
    let topology = model.topology;
    let mut e = init.values.clone();
    let mut active = Vec::new();
    for (k, node) in topology.nodes().iter().enumerate() {
        if matches!(node, Node::Shop | Node::Removal(_) | Node::Return(_)) {
            e[k] = 0.0;
        } else {
            active.push(k);
        }
    }
    if active.iter().any(|&k| !(e[k] > 0.0)) {
        return Err(Error::InvalidRate {
            name: "e_init".into(),
            value: 0.0,
        });
    }
    struct Restricted<'m, 'a> {
        inner: &'m NetworkRouting<'a>,
        active: &'m [usize],
    }
    impl RoutingModel for Restricted<'_, '_> {
        fn node_count(&self) -> usize {
            self.active.len()
        }
        fn routing_matrix(&self, e: &[f64]) -> Result<RoutingMatrix> {
            let mut full = vec![0.0; self.inner.node_count()];
            for (&k, &x) in self.active.iter().zip(e) {
                full[k] = x;
            }
            let p = self.inner.routing_matrix(&full)?;
            let m = p.matrix.select_rows(self.active).select_columns(self.active);
            Ok(RoutingMatrix { matrix: m })
        }
    }
    let restricted = Restricted {
        inner: model,
        active: &active,
    };
    let sub_init: Vec<f64> = active.iter().map(|&k| e[k]).collect();
    let sub_anchor = active.iter().position(|&k| k == anchor).unwrap_or(0);
    let sub_labels = active.iter().map(|&k| labels[k].clone()).collect();
    let (sub, mut trace) =
        iterate_fixed_point(&restricted, &sub_init, sub_anchor, sub_labels, options)?;
    let mut full = vec![0.0; e.len()];
    for (&k, &x) in active.iter().zip(&sub) {
        full[k] = x;
    }
    if options.normalization == Normalization::TotalMass {
        let scale = e.len() as f64 / full.iter().sum::<f64>();
        full.iter_mut().for_each(|x| *x *= scale);
    }
    trace.labels = labels;
    for r in &mut trace.records {
        let mut v = vec![0.0; e.len()];
        for (&k, &x) in active.iter().zip(&r.e) {
            v[k] = x;
        }
        r.e = v;
    }
    Ok((full, trace))
}

/// Runs the fixed point from `starts` random positive initial vectors and
/// returns the distinct limits found (within `tolerance` in sup-norm).
pub fn explore_fixed_points(
    config: &SystemConfig,
    topology: &Topology,
    starts: usize,
    seed: u64,
    tolerance: f64,
    options: &FixedPointOptions,
) -> Result<Vec<RelativeRates>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inits: Vec<Vec<f64>> = (0..starts)
        .map(|_| {
            (0..topology.node_count())
                .map(|_| rng.random_range(0.05..5.0))
                .collect()
        })
        .collect();
    let found = inits
        .into_par_iter()
        .map(|v| {
            let init = RelativeRates::new(topology, v)?;
            solve_relative_rates(config, topology, &init, options).map(|(e, _)| e)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut distinct: Vec<RelativeRates> = Vec::new();
    for e in found {
        let seen = distinct.iter().any(|d| {
            d.values
                .iter()
                .zip(&e.values)
                .all(|(a, b)| (a - b).abs() <= tolerance)
        });
        if !seen {
            distinct.push(e);
        }
    }
    Ok(distinct)
}

/// `|| normalize(e P(e)) - e ||_2` with freshly solved node chains.
pub fn closure_residual(
    config: &SystemConfig,
    topology: &Topology,
    rates: &RelativeRates,
    normalization: Normalization,
) -> Result<f64> {
    let model = NetworkRouting::new(config, topology);
    let p = model.routing_matrix(&rates.values)?;
    let mut next = p.apply(&rates.values);
    normalization.apply(&mut next, topology.region(0));
    Ok(distance(&next, &rates.values))
}
