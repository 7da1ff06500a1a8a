//! Fixtures shared by the criterion benches.

use activebpmf::data::{generate_synthetic, SyntheticDataset};
use activebpmf::SyntheticConfig;

/// A synthetic problem of `n_faces x n_traits` cells with two ratings each.
pub fn dataset(n_faces: usize, n_traits: usize, seed: u64) -> SyntheticDataset {
    generate_synthetic(&SyntheticConfig {
        n_faces,
        n_traits,
        ratings_per_cell: 2,
        seed,
        ..SyntheticConfig::default()
    })
    .expect("valid synthetic config")
}
