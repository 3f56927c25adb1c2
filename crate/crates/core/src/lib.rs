//! Core library for auditing demographic bias in saliency-based
//! explanations of a face presentation-attack detector.
//!
//! The pipeline: a seeded generator produces a synthetic two-group PAD
//! dataset with a controllable per-group attack-artifact strength
//! ([`synth`]); a small fixed CNN is trained per group regime ([`nn`]);
//! Grad-CAM and Grad-CAM++ rank each test image's pixels ([`saliency`]);
//! insertion/deletion curves track group HTER as ranked pixels are masked
//! ([`perturb`], [`metrics`]); and the audit reduces each (model,
//! explainer, mode) cell to an AUC difference between the groups
//! ([`audit`]).
//!
//! Everything is bit-deterministic for a given config: hand-rolled seeded
//! RNG, fixed summation orders, and order-fixed parallel reductions, so
//! artifacts are byte-identical across runs and thread counts.

pub mod audit;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod perturb;
pub mod rng;
pub mod saliency;
pub mod svg;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
