//! Ingestion, synthetic data, subsetting and feature reduction.

mod io;
mod reduce;
mod subset;
mod synthetic;

pub use io::{
    load_features, load_predictions, load_ratings, write_features, write_predictions,
    write_ratings, LoadedRatings,
};
pub use reduce::{reduce_features, Pca, ReduceMethod};
pub use subset::subset_sample;
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset};
