//! Multi-instance body-sound classification.
//!
//! The pipeline takes several recordings per subject (cough, breath,
//! counting, vowel utterances), extracts a 128-d feature vector per
//! recording from both the waveform and the mel-spectrogram, fuses the
//! per-instance features with multiheaded self-attention into a joint
//! vector, and classifies it with a logistic head. Around the model sits
//! the full experiment harness: dataset ingest and screening, deterministic
//! augmentation, subject-level cross-validation with a fixed test fold,
//! AdamW training with warmup + cosine decay, and ROC/AUC evaluation.
//!
//! Numeric code is generic over [`Scalar`] (f32 or f64); the standard
//! pipeline runs at [`Real`] while oracles and gradient checks run at f64.

pub mod audio;
pub mod checkpoint;
pub mod dsp;
pub mod encoders;
pub mod nn;
pub mod error;
pub mod fusion;
pub mod ingest;
pub mod model;
pub mod manifest;
pub mod metrics;
pub mod training;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use audio::{AudioClip, InstanceKind, Label};
pub use error::{Error, Result};
pub use rng::RngSeed;
pub use scalar::Scalar;

/// Scalar type of the standard (production) pipeline.
pub type Real = f32;
