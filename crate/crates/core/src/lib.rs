//! Counterfactual data augmentation for instance-based regression.
//!
//! The crate covers the full loop: weekly climate-outlier detection
//! ([`boundary`]), native counterfactual pair mining ([`mining`]),
//! synthetic counterfactual generation ([`augment`]), k-NN regression with
//! neighbour provenance ([`knn`]), the experiment replays and their
//! statistics ([`eval`]), and a seeded synthetic farm-weather dataset
//! ([`synth`]) to run it all on.

pub mod augment;
pub mod boundary;
pub mod error;
pub mod eval;
pub mod knn;
pub mod mining;
pub mod model;
pub mod rng;
pub mod synth;

pub use boundary::{Boundary, Label, OutlierLabel, StatsGrouping, WeeklyStats};
pub use error::{Error, Result};
pub use knn::{KnnRegressor, PredictionRecord};
pub use mining::{CfPair, MiningConfig, PairIndex};
pub use model::{distance, Case, CaseBase, Feature, FeatureSchema, FeatureSet, SchemaConfig};
