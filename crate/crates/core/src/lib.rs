//! Seed-conditioned diffusion-moment shape descriptors with spectral
//! baselines, aggregation protocols, retrieval evaluation and diagnostics.

pub mod aggregation;
pub mod audit;
pub mod descriptors;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod fields;
pub mod fixtures;
pub mod mesh;
pub mod operators;
pub mod perturb;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod seeding;

pub use error::{Error, Result};
