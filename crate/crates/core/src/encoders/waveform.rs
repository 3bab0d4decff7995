//! Waveform feature extraction: strided 1-D conv backbone producing frame
//! features at roughly 25 ms per frame, quantile pooling over time, and an
//! affine projection to 128 dimensions. An adapter variant consumes
//! precomputed frame features instead of running the conv stack.

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::nn::conv1d::{Conv1d, Conv1dCache};
use crate::nn::linear::Linear;
use crate::nn::ops::{gelu, gelu_grad};
use crate::nn::{scoped, Net, Param};
use crate::scalar::Scalar;

use super::quantile::{quantile_pool, quantile_pool_backward, QuantilePoolCache};
use super::{FeatureVector, FEATURE_DIM};

/// Scratch conv backbone configuration. The default stride schedule has a
/// total stride of 200 samples = 25 ms at 8000 Hz, with d = 64 channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveEncoderConfig {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    /// Expected input length in samples (4 s at 8000 Hz).
    pub input_len: usize,
    pub q_low: f64,
    pub q_high: f64,
    pub frozen_backbone: bool,
}

impl Default for WaveEncoderConfig {
    fn default() -> Self {
        WaveEncoderConfig {
            channels: vec![24, 40, 56, 64, 64],
            kernels: vec![20, 10, 4, 3, 3],
            strides: vec![20, 5, 2, 1, 1],
            input_len: 32000,
            q_low: 0.1,
            q_high: 0.9,
            frozen_backbone: false,
        }
    }
}

impl WaveEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty()
            || self.channels.len() != self.kernels.len()
            || self.channels.len() != self.strides.len()
        {
            return Err(Error::Config("conv stack schedule lists must have equal length".into()));
        }
        if !(0.0..=1.0).contains(&self.q_low) || !(0.0..=1.0).contains(&self.q_high) {
            return Err(Error::Config("quantiles must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        *self.channels.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct WaveformEncoder<S> {
    pub cfg: WaveEncoderConfig,
    convs: Vec<Conv1d<S>>,
    proj: Linear<S>,
}

pub struct WaveEncoderCache<S> {
    conv_caches: Vec<Conv1dCache<S>>,
    /// pre-activation output of each conv layer
    preacts: Vec<Array3<S>>,
    pool_caches: Vec<QuantilePoolCache>,
    pooled: Array2<S>,
    batch: usize,
}

impl<S: Scalar> WaveformEncoder<S> {
    pub fn new<R: Rng>(cfg: WaveEncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for i in 0..cfg.channels.len() {
            convs.push(Conv1d::new(in_ch, cfg.channels[i], cfg.kernels[i], cfg.strides[i], rng));
            in_ch = cfg.channels[i];
        }
        let proj = Linear::new(2 * cfg.feature_channels(), FEATURE_DIM, rng);
        Ok(WaveformEncoder { cfg, convs, proj })
    }

    /// Frame count the backbone yields for the configured input length.
    pub fn n_frames(&self) -> usize {
        let mut t = self.cfg.input_len;
        for c in &self.convs {
            t = c.t_out(t);
        }
        t
    }

    /// x: (batch, input_len) -> (batch, 128).
    pub fn forward(&self, x: &Array2<S>) -> Result<(Array2<S>, WaveEncoderCache<S>)> {
        let (batch, len) = x.dim();
        if len != self.cfg.input_len {
            return Err(Error::Contract(format!(
                "waveform encoder expects {} samples, got {len}",
                self.cfg.input_len
            )));
        }
        let mut h = x.view().into_shape_with_order((batch, 1, len)).unwrap().to_owned();
        let mut conv_caches = Vec::with_capacity(self.convs.len());
        let mut preacts = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (y, cache) = conv.forward(&h);
            conv_caches.push(cache);
            h = y.mapv(gelu);
            preacts.push(y);
        }

        // h: (batch, d, t) -> pooled (batch, 2d), laid out as the flatten of
        // the (2, d) quantile matrix: q_low channels then q_high channels.
        let d = self.cfg.feature_channels();
        let t = h.dim().2;
        let mut pooled = Array2::<S>::zeros((batch, 2 * d));
        let mut pool_caches = Vec::with_capacity(batch);
        for b in 0..batch {
            let frames = h.slice(s![b, .., ..]).t().to_owned(); // (t, d)
            let (p, cache) = quantile_pool(&frames.view(), self.cfg.q_low, self.cfg.q_high)?;
            for c in 0..d {
                pooled[(b, c)] = p[(0, c)];
                pooled[(b, d + c)] = p[(1, c)];
            }
            pool_caches.push(cache);
            debug_assert_eq!(frames.dim().0, t);
        }

        let out = self.proj.forward(&pooled);
        Ok((out, WaveEncoderCache { conv_caches, preacts, pool_caches, pooled, batch }))
    }

    /// Returns dx of shape (batch, input_len).
    pub fn backward(&mut self, cache: &WaveEncoderCache<S>, dy: &Array2<S>) -> Array2<S> {
        let d_pooled = self.proj.backward(&cache.pooled, dy);
        let d = self.cfg.feature_channels();
        let t = cache.preacts.last().unwrap().dim().2;
        let batch = cache.batch;

        let mut dh = Array3::<S>::zeros((batch, d, t));
        for b in 0..batch {
            let mut dp = Array2::<S>::zeros((2, d));
            for c in 0..d {
                dp[(0, c)] = d_pooled[(b, c)];
                dp[(1, c)] = d_pooled[(b, d + c)];
            }
            let dframes = quantile_pool_backward(&cache.pool_caches[b], &dp.view()); // (t, d)
            dh.slice_mut(s![b, .., ..]).assign(&dframes.t());
        }

        let frozen = self.cfg.frozen_backbone;
        let mut grad = dh;
        for i in (0..self.convs.len()).rev() {
            // gelu backward on the pre-activation
            let pre = &cache.preacts[i];
            let mut dz = pre.mapv(gelu_grad);
            dz *= &grad;
            if frozen {
                // propagate activations only; keep conv grads at zero
                let saved_w = self.convs[i].w.grad.clone();
                let saved_b = self.convs[i].b.grad.clone();
                grad = self.convs[i].backward(&cache.conv_caches[i], &dz);
                self.convs[i].w.grad = saved_w;
                self.convs[i].b.grad = saved_b;
            } else {
                grad = self.convs[i].backward(&cache.conv_caches[i], &dz);
            }
        }
        let (b, _, len) = grad.dim();
        grad.into_shape_with_order((b, len)).unwrap()
    }

    /// Single-clip contract: 8000 Hz, configured length, out dim 128.
    pub fn encode_clip(&self, clip: &AudioClip<S>, expect_rate: u32) -> Result<FeatureVector<S>> {
        if clip.sample_rate != expect_rate {
            return Err(Error::Contract(format!(
                "waveform encoder expects {expect_rate} Hz, clip is {} Hz",
                clip.sample_rate
            )));
        }
        let x = Array2::from_shape_vec((1, clip.samples.len()), clip.samples.clone())
            .expect("row vector");
        let (y, _) = self.forward(&x)?;
        FeatureVector::new(y.row(0).to_owned())
    }
}

impl<S: Scalar> Net<S> for WaveformEncoder<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        if !self.cfg.frozen_backbone {
            for (i, conv) in self.convs.iter_mut().enumerate() {
                conv.visit_params(&scoped(prefix, &format!("conv{i}")), f);
            }
        }
        self.proj.visit_params(&scoped(prefix, "proj"), f);
    }
}

/// Adapter over precomputed (t, d) frame features: quantile pooling then a
/// trainable projection from 2d to 128.
#[derive(Debug, Clone)]
pub struct WaveformAdapter<S> {
    pub feature_dim: usize,
    pub q_low: f64,
    pub q_high: f64,
    proj: Linear<S>,
}

pub struct WaveAdapterCache<S> {
    pooled: Array2<S>,
}

impl<S: Scalar> WaveformAdapter<S> {
    pub fn new<R: Rng>(feature_dim: usize, rng: &mut R) -> Self {
        WaveformAdapter {
            feature_dim,
            q_low: 0.1,
            q_high: 0.9,
            proj: Linear::new(2 * feature_dim, FEATURE_DIM, rng),
        }
    }

    /// Flattened pooled width fed to the projection (2 * d).
    pub fn flatten_len(&self) -> usize {
        2 * self.feature_dim
    }

    /// features: one (t, d) matrix per batch element.
    pub fn forward(
        &self,
        features: &[ArrayView2<'_, S>],
    ) -> Result<(Array2<S>, WaveAdapterCache<S>)> {
        let batch = features.len();
        let d = self.feature_dim;
        let mut pooled = Array2::<S>::zeros((batch, 2 * d));
        for (b, frames) in features.iter().enumerate() {
            if frames.dim().1 != d {
                return Err(Error::Contract(format!(
                    "adapter expects d = {d}, feature file has {}",
                    frames.dim().1
                )));
            }
            let (p, _) = quantile_pool(frames, self.q_low, self.q_high)?;
            for c in 0..d {
                pooled[(b, c)] = p[(0, c)];
                pooled[(b, d + c)] = p[(1, c)];
            }
        }
        let out = self.proj.forward(&pooled);
        Ok((out, WaveAdapterCache { pooled }))
    }

    pub fn backward(&mut self, cache: &WaveAdapterCache<S>, dy: &Array2<S>) {
        self.proj.backward(&cache.pooled, dy);
    }
}

impl<S: Scalar> Net<S> for WaveformAdapter<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.proj.visit_params(&scoped(prefix, "proj"), f);
    }
}
