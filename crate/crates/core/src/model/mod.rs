//! The completion network: feature extractor, seed generator and two
//! cascaded point generators.

mod config;
mod network;
mod params;

pub use config::ModelConfig;
pub use network::{
    feature_extractor, forward, point_generator, predict, seed_generator, Bound, Predictions,
};
pub use params::{param_specs, Init, ModelParams, ParamGrads, ParamSpec};
