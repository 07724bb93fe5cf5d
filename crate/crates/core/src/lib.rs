//! Wavelet-decomposed ordered gradient boosting for hourly pollutant series.

pub mod conformal;
pub mod error;
pub mod eval;
pub mod gbdt;
pub mod modwt;
pub mod pipeline;
pub mod plot;
pub mod series;

pub use error::{Error, Result};
