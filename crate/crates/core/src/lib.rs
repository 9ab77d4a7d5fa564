//! Rogue emitter detection.
//!
//! A convolutional encoder is trained jointly as a denoising autoencoder, a
//! closed-set classifier and a center-loss metric learner on known emitters.
//! At test time a record is accepted as known when its encoder feature lies
//! within `λ·√(3t)` of the nearest class center, and flagged rogue otherwise.
//!
//! The crate also ships a parametric IQ fingerprint simulator, LOF and
//! isolation-forest baselines, and the ROC/AUC/silhouette evaluation used to
//! compare them.

pub mod autodiff;
pub mod baselines;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod signal;
pub mod trainer;

pub use error::{RedError, Result};
