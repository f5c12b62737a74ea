//! Assortative-matching production model with its estimation pipeline.

pub mod aggdecomp;
pub mod akm;
pub mod config;
pub mod error;
pub mod io;
pub mod linalg;
pub mod matcheff;
pub mod model;
pub mod montecarlo;
pub mod paretofit;
pub mod params;
pub mod pipeline;
pub mod prodfn;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use params::{ModelParams, ProductionForm};
