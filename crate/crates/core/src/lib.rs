//! Post-processing that turns a closed-set classifier's exported logits and
//! penultimate-layer features into an open-set classifier.
//!
//! The pipeline has three detectors and a fused decision:
//!
//! * temperature-scaled softmax with per-class probability thresholds
//!   ([`thresholds`], fitted with [`calibration`]);
//! * local outlier factor over the feature vectors ([`lof`]);
//! * Platt-scaled novelty probabilities from both, combined against 0.5
//!   ([`fusion`]).
//!
//! [`eval`] holds the metrics and the known-class sampling protocol,
//! [`pipeline`] wires everything together and [`cli`] exposes it as the `smdn`
//! binary. Numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the file formats and
//! the command line use.

pub mod calibration;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod fusion;
pub mod lof;
mod persist;
pub mod pipeline;
pub mod scalar;
pub mod search;
pub mod thresholds;

pub use data::{load_bundle, save_bundle, Label, LabelSpace, Split, UNKNOWN_LABEL};
pub use error::{Error, Result};
pub use fusion::FusionRule;
pub use scalar::Scalar;
pub use thresholds::Method;

pub type ExampleRecord = data::ExampleRecord<f64>;
pub type DatasetBundle = data::DatasetBundle<f64>;
pub type TemperatureFit = calibration::TemperatureFit<f64>;
pub type ReliabilityReport = calibration::ReliabilityReport<f64>;
pub type SofterMaxModel = thresholds::SofterMaxModel<f64>;
pub type OpenSetPrediction = thresholds::OpenSetPrediction<f64>;
pub type LofModel = lof::LofModel<f64>;
pub type PlattScaler = fusion::PlattScaler<f64>;
pub type SmdnModel = fusion::SmdnModel<f64>;
pub type SmdnConfig = pipeline::SmdnConfig<f64>;

pub type ExampleRecordF32 = data::ExampleRecord<f32>;
pub type DatasetBundleF32 = data::DatasetBundle<f32>;
pub type SofterMaxModelF32 = thresholds::SofterMaxModel<f32>;
pub type LofModelF32 = lof::LofModel<f32>;
pub type SmdnModelF32 = fusion::SmdnModel<f32>;
