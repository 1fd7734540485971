//! The maintenance shop in isolation: repaired count `nG0` is the level
//! (`0..=Z`), unusable count `nB0` the phase, with level-dependent supports
//! from [`shop_level_support`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::markov_core::{rg_factorize, stationary_vector, BlockGenerator};
use crate::model::{shop_level_support, SystemConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ShopSolution {
    /// `support[g]` lists the admissible `nB0` values at level `nG0 = g`.
    pub support: Vec<Vec<usize>>,
    /// `levels[g][h]` is `P(nG0 = g, nB0 = support[g][h])`.
    pub levels: Vec<Vec<f64>>,
}

impl ShopSolution {
    pub fn prob(&self, good: usize, bad: usize) -> f64 {
        let Some(support) = self.support.get(good) else {
            return 0.0;
        };
        support
            .iter()
            .position(|&b| b == bad)
            .map_or(0.0, |h| self.levels[good][h])
    }

    /// `P(nG0 = Z)`, the fraction of time a repaired batch waits for dispatch.
    pub fn full_batch_prob(&self) -> f64 {
        self.levels.last().map_or(0.0, |v| v.iter().sum())
    }

    /// `P(nB0 = 0)`.
    pub fn idle_prob(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.levels)
            .flat_map(|(s, v)| s.iter().zip(v))
            .filter(|(&b, _)| b == 0)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.levels.iter().flatten().sum()
    }

    /// `(E[nG0], E[nB0])`.
    pub fn mean_counts(&self) -> (f64, f64) {
        let mut g = 0.0;
        let mut b = 0.0;
        for (level, (s, v)) in self.support.iter().zip(&self.levels).enumerate() {
            for (&bad, p) in s.iter().zip(v) {
                g += level as f64 * p;
                b += bad as f64 * p;
            }
        }
        (g, b)
    }
}

/// Generator of the shop when unusable batches arrive at relative rate `e0`.
pub fn build_shop_generator(config: &SystemConfig, e0: f64) -> Result<BlockGenerator> {
    if !e0.is_finite() || e0 < 0.0 {
        return Err(Error::InvalidRate {
            name: "e0".into(),
            value: e0,
        });
    }
    let support = shop_level_support(config);
    let m = config.remove_batch;
    let z = config.dispatch_batch;
    let cap = config.phi() * m;
    let mu0 = config.shop_dispatch_rate();
    let pos = |g: usize, b: usize| support[g].iter().position(|&x| x == b);

    let mut diag = Vec::with_capacity(z + 1);
    for (g, s) in support.iter().enumerate() {
        let dim = s.len();
        let mut q = DMatrix::zeros(dim, dim);
        for (h, &b) in s.iter().enumerate() {
            if g == z {
                q[(h, h)] = -mu0;
                continue;
            }
            let mut out = config.repair_rate(b);
            if g + b + m <= cap {
                let to = pos(g, b + m).expect("arrival stays in the level support");
                q[(h, to)] = e0;
                out += e0;
            }
            q[(h, h)] = -out;
        }
        diag.push(q);
    }
    let sup = (0..z)
        .map(|g| {
            let mut q = DMatrix::zeros(support[g].len(), support[g + 1].len());
            for (h, &b) in support[g].iter().enumerate() {
                if b > 0 {
                    let to = pos(g + 1, b - 1).expect("repair stays in the level support");
                    q[(h, to)] = config.repair_rate(b);
                }
            }
            q
        })
        .collect();
    let mut corner = DMatrix::zeros(support[z].len(), support[0].len());
    for (h, &b) in support[z].iter().enumerate() {
        let to = pos(0, b).expect("dispatch keeps the unusable count");
        corner[(h, to)] = mu0;
    }
    BlockGenerator::new(diag, sup, corner)
}

/// Stationary law of the shop at relative arrival rate `e0`. With `e0 = 0`
/// the shop stays empty.
pub fn solve_shop(config: &SystemConfig, e0: f64) -> Result<ShopSolution> {
    let gen = build_shop_generator(config, e0)?;
    let support = shop_level_support(config);
    if e0 == 0.0 {
        let mut levels: Vec<Vec<f64>> = support.iter().map(|s| vec![0.0; s.len()]).collect();
        levels[0][0] = 1.0;
        return Ok(ShopSolution { support, levels });
    }
    let factors = rg_factorize(&gen)?;
    let levels = stationary_vector(&factors)?;
    Ok(ShopSolution { support, levels })
}
