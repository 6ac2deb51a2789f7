//! A laboratory for reversible instance normalization in time-series
//! forecasting.
//!
//! The crate is organized around a small set of building blocks:
//!
//! - [`series`]: multichannel series, CSV ingestion, synthetic generation,
//!   sliding windows, chronological splits, and moment/metric helpers.
//! - [`normalize`]: the reversible normalizer family — identity, per-window
//!   z-score with optional learnable affine, and the Johnson S_U (arcsinh)
//!   normalizer with robust median/MAD instance statistics — plus analytic
//!   derivatives for all of them.
//! - [`fit`]: the closed-form Slifker–Shapiro quantile fit that produces a
//!   training-free warm-start estimate of the S_U shape pair.
//! - [`backbone`]: a per-channel linear forecaster with hand-derived
//!   gradients, AdamW, and a deterministic training loop that evaluates the
//!   loss in the original (denormalized) space.
//! - [`search`]: a from-scratch Tree-structured Parzen Estimator that refines
//!   the shape pair against validation MSE, seeded at the warm start.
//! - [`harness`]: experiment orchestration — normalizer comparisons, Wilcoxon
//!   significance tests, shape-grid sweeps, sensitivity sweeps, the joint
//!   shape-training (degeneration) driver, and deterministic report
//!   rendering.
//!
//! With the default `parallel` feature the data-parallel inner loops (window
//! statistics, synthetic channels, and independent training runs in sweeps)
//! run on rayon; disabling it yields a bit-identical sequential build.

pub mod backbone;
mod error;
pub(crate) mod exec;
pub mod fit;
pub mod harness;
pub mod normalize;
pub mod search;
pub mod series;

pub use error::{Error, Result};
