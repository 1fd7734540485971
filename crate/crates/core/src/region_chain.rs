//! A parking region in isolation: unusable count `nB` is the level
//! (`0..=M`), usable count `nG` the phase (`0..=K - nB`).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::markov_core::{rg_factorize, stationary_vector, BlockGenerator};
use crate::model::SystemConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSolution {
    pub region: usize,
    /// `levels[l][k]` is `P(nB = l, nG = k)`.
    pub levels: Vec<Vec<f64>>,
}

impl RegionSolution {
    pub fn prob(&self, good: usize, bad: usize) -> f64 {
        self.levels
            .get(bad)
            .and_then(|v| v.get(good))
            .copied()
            .unwrap_or(0.0)
    }

    /// `P(nB = M)`, the fraction of time a full batch waits for removal.
    pub fn full_batch_prob(&self) -> f64 {
        self.levels.last().map_or(0.0, |v| v.iter().sum())
    }

    /// `P(nG = 0, nB < M)`.
    pub fn empty_good_prob(&self) -> f64 {
        let m = self.levels.len() - 1;
        self.levels[..m].iter().map(|v| v[0]).sum()
    }

    pub fn total(&self) -> f64 {
        self.levels.iter().flatten().sum()
    }

    /// `(E[nG], E[nB])`.
    pub fn mean_counts(&self) -> (f64, f64) {
        let mut g = 0.0;
        let mut b = 0.0;
        for (l, v) in self.levels.iter().enumerate() {
            for (k, p) in v.iter().enumerate() {
                g += k as f64 * p;
                b += l as f64 * p;
            }
        }
        (g, b)
    }
}

fn check_rate(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidRate {
            name: name.to_string(),
            value,
        });
    }
    Ok(())
}

/// Generator of region `i` (0-based) when its relative arrival rate is `e_i`.
pub fn build_region_generator(config: &SystemConfig, i: usize, e_i: f64) -> Result<BlockGenerator> {
    check_rate("e_i", e_i)?;
    let k_max = config.fleet;
    let m = config.remove_batch;
    let lambda = config.lambda[i];
    let alpha = config.alpha;
    let mu = config.mu_remove[i];

    let diag = (0..=m)
        .map(|n| {
            let dim = k_max - n + 1;
            let mut q = DMatrix::zeros(dim, dim);
            for k in 0..dim {
                let mut out = 0.0;
                if k > 0 {
                    q[(k, k - 1)] = lambda;
                    out += lambda;
                }
                if k + 1 < dim {
                    q[(k, k + 1)] = e_i;
                    out += e_i;
                }
                out += if n < m { k as f64 * alpha } else { mu };
                q[(k, k)] = -out;
            }
            q
        })
        .collect();
    let sup = (0..m)
        .map(|n| {
            let dim = k_max - n + 1;
            let mut q = DMatrix::zeros(dim, dim - 1);
            for k in 1..dim {
                q[(k, k - 1)] = k as f64 * alpha;
            }
            q
        })
        .collect();
    let mut corner = DMatrix::zeros(k_max - m + 1, k_max + 1);
    for k in 0..=k_max - m {
        corner[(k, k)] = mu;
    }
    BlockGenerator::new(diag, sup, corner)
}

/// Stationary law of region `i` at relative arrival rate `e_i`.
///
/// With `alpha = 0` no bike ever fails, the generator is reducible, and the
/// law is the truncated geometric one on level 0.
pub fn solve_region(config: &SystemConfig, i: usize, e_i: f64) -> Result<RegionSolution> {
    check_rate("e_i", e_i)?;
    let m = config.remove_batch;
    if config.alpha == 0.0 {
        let k_max = config.fleet;
        let ratio = (e_i / config.lambda[i]).ln();
        let logs: Vec<f64> = (0..=k_max)
            .map(|k| if k == 0 { 0.0 } else { k as f64 * ratio })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|x| (x - top).exp()).collect();
        let s: f64 = w.iter().sum();
        let mut levels = vec![w.iter().map(|x| x / s).collect::<Vec<_>>()];
        levels.extend((1..=m).map(|n| vec![0.0; k_max - n + 1]));
        return Ok(RegionSolution { region: i, levels });
    }
    let gen = build_region_generator(config, i, e_i)?;
    let factors = rg_factorize(&gen)?;
    let levels = stationary_vector(&factors)?;
    Ok(RegionSolution { region: i, levels })
}
