//! Session-based next-item recommendation with per-session proxy selection.

pub mod autodiff;
pub mod combiner;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod parallel;
pub mod params;
pub mod proxy_selector;
pub mod short_term_encoder;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
