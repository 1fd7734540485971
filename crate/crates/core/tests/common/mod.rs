#![allow(dead_code)]

use dbss_core::{BlockGenerator, DMatrix, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stationary law of a dense generator from the right singular vector of
/// `Q^T` with the smallest singular value.
pub fn dense_stationary(q: &DMatrix<f64>) -> Vec<f64> {
    let svd = q.transpose().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let row = v_t.row(k);
    let s: f64 = row.iter().sum();
    row.iter().map(|x| x / s).collect()
}

/// Censors a dense generator onto its first `keep` states by eliminating
/// the rest: `A + B (-D)^{-1} C`.
pub fn schur_censor(q: &DMatrix<f64>, keep: usize) -> DMatrix<f64> {
    let n = q.nrows();
    let a = q.view((0, 0), (keep, keep)).into_owned();
    let b = q.view((0, keep), (keep, n - keep)).into_owned();
    let c = q.view((keep, 0), (n - keep, keep)).into_owned();
    let d = q.view((keep, keep), (n - keep, n - keep)).into_owned();
    let inv = (-d).try_inverse().expect("invertible");
    a + b * inv * c
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs_matrix_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).abs().max()
}

/// A random conservative generator with the given level dimensions. Entries
/// are zero with probability `sparsity`; the corner always has a positive
/// entry in every row.
pub fn random_block_generator(dims: &[usize], sparsity: f64, seed: u64) -> BlockGenerator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        if rng.random::<f64>() < sparsity {
            0.0
        } else {
            rng.random_range(0.05..3.0)
        }
    };
    let top = dims.len() - 1;
    let mut diag: Vec<DMatrix<f64>> = dims
        .iter()
        .map(|&d| {
            let mut m = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        m[(i, j)] = draw(&mut rng);
                    }
                }
            }
            m
        })
        .collect();
    let sup: Vec<DMatrix<f64>> = (0..top)
        .map(|k| {
            let mut m = DMatrix::zeros(dims[k], dims[k + 1]);
            for x in m.iter_mut() {
                *x = draw(&mut rng);
            }
            m[(0, 0)] = rng.random_range(0.05..3.0);
            m
        })
        .collect();
    let mut corner = DMatrix::zeros(dims[top], dims[0]);
    for i in 0..dims[top] {
        for j in 0..dims[0] {
            corner[(i, j)] = draw(&mut rng);
        }
        let j = rng.random_range(0..dims[0]);
        corner[(i, j)] = rng.random_range(0.05..3.0);
    }
    for k in 0..=top {
        for i in 0..dims[k] {
            let mut out: f64 = diag[k].row(i).sum();
            out += if k < top { sup[k].row(i).sum() } else { corner.row(i).sum() };
            diag[k][(i, i)] = -out;
        }
    }
    BlockGenerator::new(diag, sup, corner).expect("shapes")
}

/// The two-region example with fleet size `fleet`.
pub fn example_one(fleet: usize) -> SystemConfig {
    SystemConfig {
        regions: 2,
        fleet,
        lambda: vec![10.0, 8.0],
        mu_ride: vec![vec![0.0, 0.2], vec![0.2, 0.0]],
        p: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        alpha: 0.01,
        w: 1.0,
        r: 2,
        remove_batch: 5,
        dispatch_batch: 10,
        beta: vec![0.5, 0.5],
        mu_remove: vec![0.3, 0.3],
        mu_return: vec![0.2, 0.2],
        theta: None,
    }
}

/// A small two-region instance with the given fleet and batch sizes. Odd
/// `z` sends every repaired batch to region 1.
pub fn small(fleet: usize, m: usize, z: usize) -> SystemConfig {
    let (beta, mu_return) = if z.is_multiple_of(2) {
        (vec![0.5, 0.5], vec![0.5, 0.4])
    } else {
        (vec![1.0, 0.0], vec![0.5, 0.0])
    };
    SystemConfig {
        regions: 2,
        fleet,
        lambda: vec![1.0, 0.8],
        mu_ride: vec![vec![0.0, 1.5], vec![1.2, 0.0]],
        p: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        alpha: 0.3,
        w: 0.9,
        r: 1,
        remove_batch: m,
        dispatch_batch: z,
        beta,
        mu_remove: vec![0.7, 0.6],
        mu_return,
        theta: None,
    }
}

/// Five regions: region 1 sends riders to the other four, which all send
/// riders back to region 1. Redistribution is spread evenly; `M = Z = 5`.
pub fn star_even(fleet: usize, alpha: f64, w: f64) -> SystemConfig {
    let n = 5;
    let mut p = vec![vec![0.0; n]; n];
    let mut mu_ride = vec![vec![0.0; n]; n];
    let rates = [0.30, 0.30, 0.35, 0.35];
    for j in 1..n {
        p[0][j] = 0.25;
        p[j][0] = 1.0;
        mu_ride[0][j] = rates[j - 1];
        mu_ride[j][0] = rates[j - 1];
    }
    SystemConfig {
        regions: n,
        fleet,
        lambda: vec![15.0, 10.0, 10.0, 8.0, 8.0],
        mu_ride,
        p,
        alpha,
        w,
        r: 2,
        remove_batch: 5,
        dispatch_batch: 5,
        beta: vec![0.2; n],
        mu_remove: vec![0.2; n],
        mu_return: vec![0.40, 0.35, 0.35, 0.30, 0.30],
        theta: None,
    }
}

/// The same star, with every repaired batch sent back to region 1.
pub fn star_hub(fleet: usize, m: usize, z: usize) -> SystemConfig {
    let mut c = star_even(fleet, 0.01, 1.0);
    c.remove_batch = m;
    c.dispatch_batch = z;
    c.beta = vec![1.0, 0.0, 0.0, 0.0, 0.0];
    c.mu_return = vec![0.40, 0.0, 0.0, 0.0, 0.0];
    c
}

/// Region generator written state by state: `(good, bad)` pairs ordered by
/// `bad` then `good`.
pub fn literal_region_generator(k: usize, m: usize, lambda: f64, e: f64, alpha: f64, mu: f64) -> DMatrix<f64> {
    let states: Vec<(usize, usize)> = (0..=m).flat_map(|b| (0..=k - b).map(move |g| (g, b))).collect();
    let pos = |s: (usize, usize)| states.iter().position(|&x| x == s).unwrap();
    let n = states.len();
    let mut q = DMatrix::zeros(n, n);
    for (i, &(g, b)) in states.iter().enumerate() {
        let mut add = |to: (usize, usize), rate: f64| {
            q[(i, pos(to))] += rate;
            q[(i, i)] -= rate;
        };
        if g > 0 {
            add((g - 1, b), lambda);
        }
        if g + b < k {
            add((g + 1, b), e);
        }
        if b < m && g > 0 {
            add((g - 1, b + 1), g as f64 * alpha);
        }
        if b == m {
            add((g, 0), mu);
        }
    }
    q
}

/// Shop states `(good, bad)` ordered by `good` then `bad`: totals on the
/// `M`-lattice, at most `phi * M` bikes, at most `Z` repaired.
pub fn literal_shop_states(m: usize, z: usize, phi: usize) -> Vec<(usize, usize)> {
    (0..=z)
        .flat_map(|g| (0..=phi * m).map(move |b| (g, b)))
        .filter(|&(g, b)| (g + b) % m == 0 && g + b <= phi * m)
        .collect()
}

pub fn literal_shop_generator(config: &SystemConfig, e0: f64) -> DMatrix<f64> {
    let m = config.remove_batch;
    let z = config.dispatch_batch;
    let phi = config.fleet / m;
    let mu0: f64 = config.beta.iter().zip(&config.mu_return).map(|(b, u)| b * u).sum();
    let states = literal_shop_states(m, z, phi);
    let pos = |s: (usize, usize)| states.iter().position(|&x| x == s).unwrap();
    let n = states.len();
    let mut q = DMatrix::zeros(n, n);
    for (i, &(g, b)) in states.iter().enumerate() {
        let mut add = |to: (usize, usize), rate: f64| {
            q[(i, pos(to))] += rate;
            q[(i, i)] -= rate;
        };
        if g == z {
            add((0, b), mu0);
            continue;
        }
        if g + b + m <= phi * m {
            add((g, b + m), e0);
        }
        if b > 0 {
            add((g + 1, b - 1), b.min(config.r) as f64 * config.w);
        }
    }
    q
}
