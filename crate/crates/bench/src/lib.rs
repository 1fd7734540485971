//! Fixtures shared by the solver benchmarks.

use dbss_core::SystemConfig;

/// A two-region instance with fleet size `fleet`.
pub fn two_region_config(fleet: usize) -> SystemConfig {
    SystemConfig {
        regions: 2,
        fleet,
        lambda: vec![2.0, 3.0],
        mu_ride: vec![vec![0.0, 0.2], vec![0.2, 0.0]],
        p: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        alpha: 0.01,
        w: 1.0,
        r: 2,
        remove_batch: 5,
        dispatch_batch: 10,
        beta: vec![0.5, 0.5],
        mu_remove: vec![0.2, 0.2],
        mu_return: vec![0.2, 0.2],
        theta: None,
    }
}
