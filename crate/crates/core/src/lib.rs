//! Adaptive elicitation of group opinions: a latent-class predictor, a
//! heterogeneous graph network for imputation, information-gain round
//! selection, a brute-force lab for the greedy guarantees and an evaluation
//! harness.

pub mod error;
pub mod graph;
pub mod harness;
pub mod lab;
pub mod policy;
pub mod population;
pub mod predictive;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LatentClassModelF64 = predictive::LatentClassModel<f64>;
pub type LatentClassModelF32 = predictive::LatentClassModel<f32>;
pub type PosteriorStateF64 = predictive::PosteriorState<f64>;
pub type PosteriorStateF32 = predictive::PosteriorState<f32>;
pub type CopulaPredictorF64 = predictive::CopulaPredictor<f64>;
pub type CopulaPredictorF32 = predictive::CopulaPredictor<f32>;
pub type GnnParametersF64 = graph::GnnParameters<f64>;
pub type GnnParametersF32 = graph::GnnParameters<f32>;
pub type ElicitationStateF64 = policy::ElicitationState<f64>;
pub type ElicitationStateF32 = policy::ElicitationState<f32>;
