mod common;

use common::{
    dense_stationary, literal_region_generator, literal_shop_generator, literal_shop_states,
    max_abs_diff, max_abs_matrix_diff,
};
use dbss_core::markov_core::rg_factorize;
use dbss_core::model::shop_level_support;
use dbss_core::region_chain::{build_region_generator, solve_region};
use dbss_core::shop_chain::{build_shop_generator, solve_shop};
use dbss_core::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn flat(levels: &[Vec<f64>]) -> Vec<f64> {
    levels.iter().flatten().copied().collect()
}

#[test]
fn region_failure_block_pattern() {
    let mut c = common::small(2, 1, 1);
    c.alpha = 0.3;
    let gen = build_region_generator(&c, 0, 1.0).unwrap();
    assert_eq!(gen.level_dims(), vec![3, 2]);
    let expected = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.3, 0.0, 0.0, 0.6]);
    assert!(max_abs_matrix_diff(gen.sup(0), &expected) < 1e-15);
}

#[test]
fn region_diagonal_blocks_are_literal() {
    let c = common::small(3, 2, 2);
    let (lam, e, a, mu) = (c.lambda[0], 1.4, c.alpha, c.mu_remove[0]);
    let gen = build_region_generator(&c, 0, e).unwrap();
    let q00 = DMatrix::from_row_slice(
        4,
        4,
        &[
            -e, e, 0.0, 0.0,
            lam, -(lam + e + a), e, 0.0,
            0.0, lam, -(lam + e + 2.0 * a), e,
            0.0, 0.0, lam, -(lam + 3.0 * a),
        ],
    );
    assert!(max_abs_matrix_diff(gen.diag(0), &q00) < 1e-15);
    let q22 = DMatrix::from_row_slice(2, 2, &[-(e + mu), e, lam, -(lam + mu)]);
    assert!(max_abs_matrix_diff(gen.diag(2), &q22) < 1e-15);
    let corner = DMatrix::from_row_slice(2, 4, &[mu, 0.0, 0.0, 0.0, 0.0, mu, 0.0, 0.0]);
    assert_eq!(*gen.corner(), corner);
}

#[test]
fn region_rows_are_conservative() {
    let mut c = common::small(3, 2, 2);
    c.lambda[0] = 1.0;
    c.alpha = 0.1;
    c.mu_remove[0] = 0.5;
    let q = build_region_generator(&c, 0, 1.0).unwrap().assemble();
    for row in q.row_iter() {
        assert!(row.sum().abs() < 1e-14);
    }
}

#[test]
fn region_without_failures_is_truncated_geometric() {
    let mut c = common::small(5, 2, 2);
    c.alpha = 0.0;
    let gen = build_region_generator(&c, 0, 0.6).unwrap();
    assert!(gen.sup(0).iter().all(|&x| x == 0.0));
    let sol = solve_region(&c, 0, 0.6).unwrap();
    let ratio = 0.6 / c.lambda[0];
    let w: Vec<f64> = (0..=5).map(|k| ratio.powi(k)).collect();
    let s: f64 = w.iter().sum();
    let expected: Vec<f64> = w.iter().map(|x| x / s).collect();
    assert!(max_abs_diff(&sol.levels[0], &expected) < 1e-14);
    assert!(sol.levels[1..].iter().flatten().all(|&x| x == 0.0));
}

// Levels below M are only left through further failures, so as failures
// vanish the law spreads over levels 0..M-1 instead of collapsing onto
// level 0; only the full level empties.
#[test]
fn region_with_vanishing_failures() {
    let mut c = common::small(5, 2, 2);
    c.alpha = 1e-12;
    let sol = solve_region(&c, 0, 0.9).unwrap();
    assert!(sol.full_batch_prob() < 1e-6, "{}", sol.full_batch_prob());
    let level1: f64 = sol.levels[1].iter().sum();
    assert!(level1 > 0.1, "{level1}");
    let q = literal_region_generator(5, 2, c.lambda[0], 0.9, 1e-12, c.mu_remove[0]);
    let pi = flat(&sol.levels);
    let residual = DMatrix::from_row_slice(1, pi.len(), &pi) * q;
    assert!(residual.abs().max() < 1e-12);
}

#[test]
fn region_matches_literal_generator() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..60 {
        let k = rng.random_range(1..=6);
        let m = rng.random_range(1..=3.min(k));
        let mut c = common::small(k, m, m);
        c.lambda[0] = rng.random_range(0.1..5.0);
        c.alpha = rng.random_range(0.01..2.0);
        c.mu_remove[0] = rng.random_range(0.05..3.0);
        let e = rng.random_range(0.05..5.0);
        let sol = solve_region(&c, 0, e).unwrap();
        let q = literal_region_generator(k, m, c.lambda[0], e, c.alpha, c.mu_remove[0]);
        assert!(max_abs_matrix_diff(&build_region_generator(&c, 0, e).unwrap().assemble(), &q) < 1e-15);
        assert!(max_abs_diff(&flat(&sol.levels), &dense_stationary(&q)) < 1e-9);
        assert!((sol.total() - 1.0).abs() < 1e-10);
        for (l, v) in sol.levels.iter().enumerate() {
            assert_eq!(v.len(), k - l + 1);
        }
    }
}

#[test]
fn faster_removal_does_not_raise_full_batch_mass() {
    let mut c = common::small(6, 3, 3);
    for e in [0.3, 1.0, 2.5] {
        let mut last = f64::INFINITY;
        for mu in [0.1, 0.3, 1.0, 3.0, 10.0] {
            c.mu_remove[0] = mu;
            let p = solve_region(&c, 0, e).unwrap().full_batch_prob();
            assert!(p <= last + 1e-15, "mu {mu}: {p} > {last}");
            last = p;
        }
    }
}

#[test]
fn identical_regions_have_identical_laws() {
    let mut c = common::small(5, 2, 2);
    c.lambda = vec![1.3, 1.3];
    c.mu_remove = vec![0.4, 0.4];
    assert_eq!(solve_region(&c, 0, 0.8).unwrap().levels, solve_region(&c, 1, 0.8).unwrap().levels);
}

#[test]
fn shop_support_table() {
    let c = common::small(8, 2, 4);
    let support = shop_level_support(&c);
    assert_eq!(
        support,
        vec![
            vec![0, 2, 4, 6, 8],
            vec![1, 3, 5, 7],
            vec![0, 2, 4, 6],
            vec![1, 3, 5],
            vec![0, 2, 4],
        ]
    );
    let c = common::small(7, 3, 6);
    let support = shop_level_support(&c);
    let literal = literal_shop_states(3, 6, 2);
    for (g, bs) in support.iter().enumerate() {
        let expected: Vec<usize> = literal.iter().filter(|s| s.0 == g).map(|s| s.1).collect();
        assert_eq!(*bs, expected, "level {g}");
    }
}

#[test]
fn shop_rates_for_two_region_example() {
    let c = common::example_one(20);
    assert!((c.shop_dispatch_rate() - 0.2).abs() < 1e-15);
    assert_eq!(c.repair_rate(1), 1.0);
    for n in 2..=20 {
        assert_eq!(c.repair_rate(n), 2.0);
    }
    let mut ample = c.clone();
    ample.r = ample.phi() * ample.remove_batch;
    for n in 0..=ample.r {
        assert_eq!(ample.repair_rate(n), n as f64 * ample.w);
    }
}

#[test]
fn shop_blocks_are_literal() {
    let c = common::small(6, 2, 4);
    let e0 = 0.7;
    let wb = |n: usize| c.repair_rate(n);
    let gen = build_shop_generator(&c, e0).unwrap();
    // Level 0 holds nB0 in {0, 2, 4, 6}.
    let t00 = DMatrix::from_row_slice(
        4,
        4,
        &[
            -e0, e0, 0.0, 0.0,
            0.0, -(wb(2) + e0), e0, 0.0,
            0.0, 0.0, -(wb(4) + e0), e0,
            0.0, 0.0, 0.0, -wb(6),
        ],
    );
    assert!(max_abs_matrix_diff(gen.diag(0), &t00) < 1e-15);
    let t01 = DMatrix::from_row_slice(4, 3, &[0.0, 0.0, 0.0, wb(2), 0.0, 0.0, 0.0, wb(4), 0.0, 0.0, 0.0, wb(6)]);
    assert!(max_abs_matrix_diff(gen.sup(0), &t01) < 1e-15);
    let mu0 = c.shop_dispatch_rate();
    assert_eq!(*gen.diag(4), DMatrix::from_diagonal_element(2, 2, -mu0));
    let corner = DMatrix::from_row_slice(2, 4, &[mu0, 0.0, 0.0, 0.0, 0.0, mu0, 0.0, 0.0]);
    assert_eq!(*gen.corner(), corner);
    for row in gen.assemble().row_iter() {
        assert!(row.sum().abs() < 1e-14);
    }
}

#[test]
fn shop_matches_literal_generator() {
    let c = common::small(4, 2, 2);
    let sol = solve_shop(&c, 0.8).unwrap();
    let q = literal_shop_generator(&c, 0.8);
    assert!(max_abs_diff(&flat(&sol.levels), &dense_stationary(&q)) < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let m = rng.random_range(1..=3);
        let psi = rng.random_range(1..=(6 / m).min(4));
        let phi = rng.random_range(psi..=4);
        let mut c = common::small(phi * m + rng.random_range(0..m), m, psi * m);
        c.w = rng.random_range(0.1..3.0);
        c.r = rng.random_range(1..=4);
        c.mu_return = vec![rng.random_range(0.05..2.0), rng.random_range(0.05..2.0)];
        let e0 = rng.random_range(0.05..4.0);
        let gen = build_shop_generator(&c, e0).unwrap();
        let q = literal_shop_generator(&c, e0);
        assert!(max_abs_matrix_diff(&gen.assemble(), &q) < 1e-15);
        let sol = solve_shop(&c, e0).unwrap();
        assert!(max_abs_diff(&flat(&sol.levels), &dense_stationary(&q)) < 1e-9);
        assert!((sol.total() - 1.0).abs() < 1e-10);
        assert!(rg_factorize(&gen).is_ok());
    }
}

#[test]
fn shop_limits() {
    let c = common::small(6, 2, 2);
    let quiet = solve_shop(&c, 1e-9).unwrap();
    assert!(quiet.prob(0, 0) > 1.0 - 1e-6);
    let empty = solve_shop(&c, 0.0).unwrap();
    assert_eq!(empty.prob(0, 0), 1.0);

    let mut fast = c.clone();
    fast.w = 1e6;
    let sol = solve_shop(&fast, 1.0).unwrap();
    let busy: f64 = 1.0 - sol.idle_prob();
    assert!(busy < 1e-3, "{busy}");
}
