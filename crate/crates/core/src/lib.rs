//! Contrastive spatiotemporal PSD learning for remote photoplethysmography.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for common uses.

pub mod error;
pub mod experiments;
pub mod model;
pub mod sampling;
pub mod scalar;
pub mod signal;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Signal32 = signal::Signal<f32>;
pub type Signal64 = signal::Signal<f64>;
pub type Model32 = model::StModel<f32>;
pub type Model64 = model::StModel<f64>;
pub type Block32 = model::StRppgBlock<f32>;
pub type Block64 = model::StRppgBlock<f64>;
