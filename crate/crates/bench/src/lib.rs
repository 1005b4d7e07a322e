//! Shared fixtures for the benchmark targets.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trajattr_core::data::{generate_offline_dataset, BehaviorMix, Dataset};
use trajattr_core::gridworld::{GridLayout, DEFAULT_LAYOUT};

pub fn default_layout() -> GridLayout {
    GridLayout::parse(DEFAULT_LAYOUT).expect("built-in layout parses")
}

pub fn default_dataset(n_traj: usize, seed: u64) -> Dataset {
    generate_offline_dataset(
        &default_layout(),
        DEFAULT_LAYOUT,
        &BehaviorMix::default(),
        n_traj,
        30,
        seed,
    )
    .expect("generation succeeds")
}

/// Gaussian-ish blobs around the given centers, `count` points each.
pub fn blob_points(centers: &[[f64; 2]], count: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(centers.len() * count);
    for c in centers {
        for _ in 0..count {
            points.push(vec![
                c[0] + rng.gen_range(-spread..spread),
                c[1] + rng.gen_range(-spread..spread),
            ]);
        }
    }
    points
}

/// Random points on the probability simplex.
pub fn simplex_points(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0f64..1.0)).collect();
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total);
            v
        })
        .collect()
}
