//! Two-stage residual-motion image-to-video generation.
//!
//! A forecasting generator turns one frame plus a target motion condition
//! into a future frame by predicting a residual mask and content map; a
//! spatiotemporal refiner then predicts a clip-level residual over the
//! concatenated coarse frames. Both are trained against Wasserstein critics
//! with gradient penalty.

pub mod checkpoint;
pub mod condition;
pub mod error;
pub mod features;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod residual;
pub mod training;

pub use error::{Error, Result};
