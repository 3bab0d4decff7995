//! Per-instance feature extraction: a strided-conv waveform encoder and a
//! patch-transformer spectrogram encoder, both emitting 128-d vectors, plus
//! adapters that consume precomputed backbone features from disk.

pub mod features;
pub mod quantile;
pub mod spectrogram;
pub mod waveform;

pub use quantile::{quantile_pool, quantile_pool_backward, QuantilePoolCache};
pub use spectrogram::{SpecEncoderConfig, SpectrogramAdapter, SpectrogramEncoder};
pub use waveform::{WaveEncoderConfig, WaveformAdapter, WaveformEncoder};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimension every encoder projects to.
pub const FEATURE_DIM: usize = 128;

/// A single 128-d embedding, validated finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<S>(pub Array1<S>);

impl<S: Scalar> FeatureVector<S> {
    pub fn new(values: Array1<S>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::Contract(format!(
                "feature vector has dimension {}, expected {FEATURE_DIM}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("feature vector contains non-finite values".into()));
        }
        Ok(FeatureVector(values))
    }
}

/// Waveform-branch backbone selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaveBackbone {
    ScratchConv(WaveEncoderConfig),
    /// Precomputed frame features of dimension `feature_dim` per clip,
    /// loaded from `features_dir` in the documented binary layout.
    ExternalAdapter { feature_dim: usize, features_dir: std::path::PathBuf },
}

impl Default for WaveBackbone {
    fn default() -> Self {
        WaveBackbone::ScratchConv(WaveEncoderConfig::default())
    }
}

/// Spectrogram-branch backbone selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecBackbone {
    ScratchPatchTransformer(SpecEncoderConfig),
    /// Precomputed per-clip embeddings (t = 1 row of `feature_dim` values).
    ExternalAdapter { feature_dim: usize, features_dir: std::path::PathBuf },
}

impl Default for SpecBackbone {
    fn default() -> Self {
        SpecBackbone::ScratchPatchTransformer(SpecEncoderConfig::default())
    }
}
