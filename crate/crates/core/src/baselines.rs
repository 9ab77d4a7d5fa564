//! Classical anomaly scorers over the same feature vectors as the detector.

mod iforest;
mod lof;

pub use iforest::{average_path_length, IsoForest, IsoForestParams};
pub use lof::{LofModel, LOF_DENSITY_FLOOR};
