//! Continual learning for keyword spotting: MFCC front-end, a small
//! reverse-mode autodiff engine, TC-ResNet models with progressive
//! sub-networks, continual-learning strategies, task streams, metrics and
//! the training loop that ties them together.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod frontend;
pub mod metrics;
pub mod models;
pub mod seed;
pub mod strategies;
pub mod taskstream;
pub mod trainer;

pub use error::{Error, Result};
