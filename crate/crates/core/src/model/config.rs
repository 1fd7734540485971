use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Topology;

/// Tolerance used when checking sums of probabilities and integrality of
/// `beta[i] * Z`.
pub const CONFIG_TOLERANCE: f64 = 1e-9;

/// Full parameterization of the bike-sharing network.
///
/// Region-indexed arrays are stored 0-based: `lambda[0]` is region 1. In the
/// configuration file the same arrays appear in the same order, and the
/// optional `theta` lists name downlink regions 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of parking regions.
    #[serde(rename = "N")]
    pub regions: usize,
    /// Total fleet size.
    #[serde(rename = "K")]
    pub fleet: usize,
    /// User arrival rate at each region.
    pub lambda: Vec<f64>,
    /// Riding rate on road `i -> j`; only entries with `j` in `theta[i]` are read.
    pub mu_ride: Vec<Vec<f64>>,
    /// Probability that a rented bike at region `i` is ridden to region `j`.
    pub p: Vec<Vec<f64>>,
    /// Failure rate of a parked usable bike.
    pub alpha: f64,
    /// Per-repairman repair rate.
    pub w: f64,
    /// Number of repairmen.
    pub r: usize,
    /// Removal batch size.
    #[serde(rename = "M")]
    pub remove_batch: usize,
    /// Redistribution batch size.
    #[serde(rename = "Z")]
    pub dispatch_batch: usize,
    /// Share of a redistribution batch sent to each region.
    pub beta: Vec<f64>,
    /// Truck rate region `i` -> shop.
    pub mu_remove: Vec<f64>,
    /// Truck rate shop -> region `i`.
    pub mu_return: Vec<f64>,
    /// Downlink region sets, 1-based. Derived from the positive entries of `p`
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<Vec<usize>>>,
}

/// A single violated constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `phi = floor(K / M)`, the largest number of removal batches in flight.
    pub fn phi(&self) -> usize {
        self.fleet / self.remove_batch
    }

    /// `psi = Z / M`.
    pub fn psi(&self) -> usize {
        self.dispatch_batch / self.remove_batch
    }

    /// Bikes sent to region `i` per redistribution batch, `beta[i] * Z`.
    pub fn dispatch_share(&self, i: usize) -> usize {
        (self.beta[i] * self.dispatch_batch as f64).round() as usize
    }

    /// Aggregate dispatch rate of the shop, `sum_i beta[i] * mu_return[i]`.
    pub fn shop_dispatch_rate(&self) -> f64 {
        self.beta
            .iter()
            .zip(&self.mu_return)
            .map(|(b, m)| b * m)
            .sum()
    }

    /// Repair rate with `n` unusable bikes in the shop.
    pub fn repair_rate(&self, n: usize) -> f64 {
        n.min(self.r) as f64 * self.w
    }

    /// Every violated invariant; empty when the configuration is valid.
    pub fn validate(&self, topology: &Topology) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.regions;

        if n == 0 {
            out.push(Violation::new("N", "at least one parking region is required"));
            return out;
        }
        if self.fleet == 0 {
            out.push(Violation::new("K", "fleet size must be positive"));
        }
        if self.r == 0 {
            out.push(Violation::new("r", "at least one repairman is required"));
        }
        if self.remove_batch == 0 {
            out.push(Violation::new("M", "removal batch size must be positive"));
        }
        if self.dispatch_batch == 0 {
            out.push(Violation::new("Z", "redistribution batch size must be positive"));
        }

        let mut shapes_ok = true;
        for (name, len) in [
            ("lambda", self.lambda.len()),
            ("beta", self.beta.len()),
            ("mu_remove", self.mu_remove.len()),
            ("mu_return", self.mu_return.len()),
            ("p", self.p.len()),
            ("mu_ride", self.mu_ride.len()),
        ] {
            if len != n {
                shapes_ok = false;
                out.push(Violation::new(name, format!("expected {n} entries, found {len}")));
            }
        }
        for (name, rows) in [("p", &self.p), ("mu_ride", &self.mu_ride)] {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n {
                    shapes_ok = false;
                    out.push(Violation::new(
                        format!("{name}[{}]", i + 1),
                        format!("expected {n} entries, found {}", row.len()),
                    ));
                }
            }
        }
        if topology.regions() != n {
            shapes_ok = false;
            out.push(Violation::new("theta", "topology does not match N"));
        }
        if !shapes_ok {
            return out;
        }

        for i in 0..n {
            let f = |name: &str| format!("{name}[{}]", i + 1);
            if !(self.lambda[i] > 0.0 && self.lambda[i].is_finite()) {
                out.push(Violation::new(f("lambda"), "arrival rate must be positive"));
            }
            if !(self.mu_remove[i] > 0.0 && self.mu_remove[i].is_finite()) {
                out.push(Violation::new(f("mu_remove"), "removal truck rate must be positive"));
            }
            if !(self.mu_return[i] >= 0.0 && self.mu_return[i].is_finite()) {
                out.push(Violation::new(f("mu_return"), "return truck rate must be nonnegative"));
            }
            if !(self.beta[i] >= 0.0) {
                out.push(Violation::new(f("beta"), "share must be nonnegative"));
            }
            if self.beta[i] > 0.0 && self.mu_return[i] <= 0.0 {
                out.push(Violation::new(
                    f("mu_return"),
                    "return truck rate must be positive when beta is positive",
                ));
            }
            if self.mu_return[i] == 0.0 && self.beta[i] != 0.0 {
                out.push(Violation::new(f("beta"), "share must be 0 when mu_return is 0"));
            }

            let theta = topology.theta(i);
            if theta.is_empty() {
                out.push(Violation::new(
                    format!("theta[{}]", i + 1),
                    format!("region {} has no downlink region", i + 1),
                ));
            }
            for &j in theta {
                if j == i || j >= n {
                    out.push(Violation::new(
                        format!("theta[{}]", i + 1),
                        format!("invalid downlink region {}", j + 1),
                    ));
                    continue;
                }
                if !(self.mu_ride[i][j] > 0.0 && self.mu_ride[i][j].is_finite()) {
                    out.push(Violation::new(
                        format!("mu_ride[{}][{}]", i + 1, j + 1),
                        "riding rate must be positive",
                    ));
                }
                if self.p[i][j] < 0.0 {
                    out.push(Violation::new(
                        format!("p[{}][{}]", i + 1, j + 1),
                        "routing probability must be nonnegative",
                    ));
                }
            }
            for j in 0..n {
                if !theta.contains(&j) && self.p[i][j] != 0.0 {
                    out.push(Violation::new(
                        format!("p[{}][{}]", i + 1, j + 1),
                        format!("region {} is not in the downlink of region {}", j + 1, i + 1),
                    ));
                }
            }
            let sum: f64 = theta.iter().filter(|&&j| j < n).map(|&j| self.p[i][j]).sum();
            if (sum - 1.0).abs() > CONFIG_TOLERANCE {
                out.push(Violation::new(
                    format!("p[{}]", i + 1),
                    format!("routing probabilities of region {} sum to {} ≠ 1", i + 1, sum),
                ));
            }
        }

        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            out.push(Violation::new("alpha", "failure rate must be nonnegative"));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            out.push(Violation::new("w", "repair rate must be positive"));
        }

        if self.remove_batch > 0 && self.dispatch_batch > 0 {
            if !self.dispatch_batch.is_multiple_of(self.remove_batch) {
                out.push(Violation::new("Z", "Z not an integer multiple of M"));
            } else if self.fleet < self.dispatch_batch {
                out.push(Violation::new(
                    "K",
                    "fleet must hold at least one redistribution batch (K >= Z)",
                ));
            }
        }

        let beta_sum: f64 = self.beta.iter().sum();
        if (beta_sum - 1.0).abs() > CONFIG_TOLERANCE {
            out.push(Violation::new("beta", format!("shares sum to {beta_sum} ≠ 1")));
        }
        for i in 0..n {
            let zi = self.beta[i] * self.dispatch_batch as f64;
            if (zi - zi.round()).abs() > CONFIG_TOLERANCE {
                out.push(Violation::new(
                    format!("beta[{}]", i + 1),
                    format!("beta * Z = {zi} is not an integer"),
                ));
            }
        }

        if !topology.is_path_irreducible() {
            out.push(Violation::new("theta", "node graph is not strongly connected"));
        }
        out
    }

    pub fn ensure_valid(&self, topology: &Topology) -> Result<()> {
        let v = self.validate(topology);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}
