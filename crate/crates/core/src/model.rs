//! Assembly of the per-experiment model: encoder branches shared across all
//! instances of a representation, instance-token construction, the fusion
//! unit, and the classifier head.

use ndarray::{s, Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::encoders::spectrogram::{SpecAdapterCache, SpecEncoderCache};
use crate::encoders::waveform::{WaveAdapterCache, WaveEncoderCache};
use crate::encoders::{
    SpecBackbone, SpectrogramAdapter, SpectrogramEncoder, WaveBackbone, WaveformAdapter,
    WaveformEncoder, FEATURE_DIM,
};
use crate::error::{Error, Result};
use crate::fusion::{Classifier, ClassifierCache, FusionCache, FusionConfig, FusionUnit};
use crate::nn::ops::sigmoid;
use crate::nn::{scoped, Net, Param};
use crate::rng::{stream, RngSeed};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Waveform,
    Spectrogram,
    Dual,
}

impl Representation {
    pub fn uses_wave(self) -> bool {
        matches!(self, Representation::Waveform | Representation::Dual)
    }

    pub fn uses_spec(self) -> bool {
        matches!(self, Representation::Spectrogram | Representation::Dual)
    }

    /// Token width: 256 in dual mode, 128 single-representation.
    pub fn token_dim(self) -> usize {
        match self {
            Representation::Dual => 2 * FEATURE_DIM,
            _ => FEATURE_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub representation: Representation,
    pub n_instances: usize,
    pub wave_backbone: Option<WaveBackbone>,
    pub spec_backbone: Option<SpecBackbone>,
    pub fusion: FusionConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_instances == 0 {
            return Err(Error::Config("model needs at least one instance".into()));
        }
        if self.representation.uses_wave() && self.wave_backbone.is_none() {
            return Err(Error::Config("waveform representation needs a wave backbone".into()));
        }
        if self.representation.uses_spec() && self.spec_backbone.is_none() {
            return Err(Error::Config("spectrogram representation needs a spec backbone".into()));
        }
        if self.fusion.attention && self.representation.token_dim() % self.fusion.heads != 0 {
            return Err(Error::Config(format!(
                "token dim {} not divisible by {} fusion heads",
                self.representation.token_dim(),
                self.fusion.heads
            )));
        }
        Ok(())
    }
}

pub enum WaveBranch<S> {
    Scratch(WaveformEncoder<S>),
    Adapter(WaveformAdapter<S>),
}

pub enum SpecBranch<S> {
    Scratch(SpectrogramEncoder<S>),
    Adapter(SpectrogramAdapter<S>),
}

/// Batched input to the model. `wave`/`spec` feed scratch backbones;
/// `wave_feats`/`spec_feats` feed the external adapters.
#[derive(Debug, Clone)]
pub struct ModelInput<S> {
    /// (batch, c, samples)
    pub wave: Option<Array3<S>>,
    /// per batch element, per instance: a (t, d) frame-feature matrix
    pub wave_feats: Option<Vec<Vec<Array2<S>>>>,
    /// (batch, c, n_mels, n_frames), standardized log-mels
    pub spec: Option<Array4<S>>,
    /// (batch, c, feature_dim)
    pub spec_feats: Option<Array3<S>>,
}

impl<S> Default for ModelInput<S> {
    fn default() -> Self {
        ModelInput { wave: None, wave_feats: None, spec: None, spec_feats: None }
    }
}

enum WaveCacheKind<S> {
    Scratch(WaveEncoderCache<S>),
    Adapter(WaveAdapterCache<S>),
}

enum SpecCacheKind<S> {
    Scratch(SpecEncoderCache<S>),
    Adapter(SpecAdapterCache<S>),
}

pub struct ModelCache<S> {
    batch: usize,
    wave: Option<WaveCacheKind<S>>,
    spec: Option<SpecCacheKind<S>>,
    fusion: FusionCache<S>,
    classifier: ClassifierCache<S>,
}

impl<S: Scalar> ModelCache<S> {
    pub fn fusion_cache(&self) -> &FusionCache<S> {
        &self.fusion
    }
}

/// Gradients with respect to the model inputs (scratch branches only).
pub struct InputGrads<S> {
    pub wave: Option<Array3<S>>,
    pub spec: Option<Array4<S>>,
}

pub struct ExperimentModel<S> {
    pub config: ModelConfig,
    wave: Option<WaveBranch<S>>,
    spec: Option<SpecBranch<S>>,
    fusion: FusionUnit<S>,
    classifier: Classifier<S>,
}

impl<S: Scalar> ExperimentModel<S> {
    /// Build with weights drawn deterministically from the seed.
    pub fn new(config: ModelConfig, seed: RngSeed) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "model-init", &[], &[]);
        let wave = if config.representation.uses_wave() {
            Some(match config.wave_backbone.as_ref().unwrap() {
                WaveBackbone::ScratchConv(cfg) => {
                    WaveBranch::Scratch(WaveformEncoder::new(cfg.clone(), &mut rng)?)
                }
                WaveBackbone::ExternalAdapter { feature_dim, .. } => {
                    WaveBranch::Adapter(WaveformAdapter::new(*feature_dim, &mut rng))
                }
            })
        } else {
            None
        };
        let spec = if config.representation.uses_spec() {
            Some(match config.spec_backbone.as_ref().unwrap() {
                SpecBackbone::ScratchPatchTransformer(cfg) => {
                    SpecBranch::Scratch(SpectrogramEncoder::new(cfg.clone(), &mut rng)?)
                }
                SpecBackbone::ExternalAdapter { feature_dim, .. } => {
                    SpecBranch::Adapter(SpectrogramAdapter::new(*feature_dim, &mut rng))
                }
            })
        } else {
            None
        };
        let token_dim = config.representation.token_dim();
        let fusion = FusionUnit::new(config.fusion, config.n_instances, token_dim, &mut rng)?;
        let classifier = Classifier::new(crate::fusion::JOINT_DIM, &mut rng);
        Ok(ExperimentModel { config, wave, spec, fusion, classifier })
    }

    fn wave_features(
        &self,
        input: &ModelInput<S>,
        batch: usize,
        c: usize,
    ) -> Result<(Array2<S>, WaveCacheKind<S>)> {
        match self.wave.as_ref().unwrap() {
            WaveBranch::Scratch(enc) => {
                let wave = input
                    .wave
                    .as_ref()
                    .ok_or_else(|| Error::Contract("model expects waveform input".into()))?;
                let (b, ci, len) = wave.dim();
                if b != batch || ci != c {
                    return Err(Error::Contract("waveform batch shape mismatch".into()));
                }
                let flat =
                    wave.view().into_shape_with_order((b * ci, len)).unwrap().to_owned();
                let (feats, cache) = enc.forward(&flat)?;
                Ok((feats, WaveCacheKind::Scratch(cache)))
            }
            WaveBranch::Adapter(ad) => {
                let feats_in = input
                    .wave_feats
                    .as_ref()
                    .ok_or_else(|| Error::Contract("model expects waveform feature files".into()))?;
                if feats_in.len() != batch || feats_in.iter().any(|v| v.len() != c) {
                    return Err(Error::Contract("waveform feature batch mismatch".into()));
                }
                let views: Vec<_> =
                    feats_in.iter().flat_map(|per_b| per_b.iter().map(|m| m.view())).collect();
                let (feats, cache) = ad.forward(&views)?;
                Ok((feats, WaveCacheKind::Adapter(cache)))
            }
        }
    }

    fn spec_features(
        &self,
        input: &ModelInput<S>,
        batch: usize,
        c: usize,
    ) -> Result<(Array2<S>, SpecCacheKind<S>)> {
        match self.spec.as_ref().unwrap() {
            SpecBranch::Scratch(enc) => {
                let spec = input
                    .spec
                    .as_ref()
                    .ok_or_else(|| Error::Contract("model expects spectrogram input".into()))?;
                let (b, ci, m, t) = spec.dim();
                if b != batch || ci != c {
                    return Err(Error::Contract("spectrogram batch shape mismatch".into()));
                }
                let flat =
                    spec.view().into_shape_with_order((b * ci, m, t)).unwrap().to_owned();
                let (feats, cache) = enc.forward(&flat)?;
                Ok((feats, SpecCacheKind::Scratch(cache)))
            }
            SpecBranch::Adapter(ad) => {
                let feats_in = input.spec_feats.as_ref().ok_or_else(|| {
                    Error::Contract("model expects spectrogram feature files".into())
                })?;
                let (b, ci, d) = feats_in.dim();
                if b != batch || ci != c {
                    return Err(Error::Contract("spectrogram feature batch mismatch".into()));
                }
                let flat =
                    feats_in.view().into_shape_with_order((b * ci, d)).unwrap().to_owned();
                let (feats, cache) = ad.forward(&flat)?;
                Ok((feats, SpecCacheKind::Adapter(cache)))
            }
        }
    }

    pub fn batch_of(&self, input: &ModelInput<S>) -> Result<usize> {
        if let Some(w) = &input.wave {
            return Ok(w.dim().0);
        }
        if let Some(w) = &input.wave_feats {
            return Ok(w.len());
        }
        if let Some(sp) = &input.spec {
            return Ok(sp.dim().0);
        }
        if let Some(sp) = &input.spec_feats {
            return Ok(sp.dim().0);
        }
        Err(Error::Contract("empty model input".into()))
    }

    /// Forward pass to logits (batch,).
    pub fn forward(&self, input: &ModelInput<S>) -> Result<(Array1<S>, ModelCache<S>)> {
        let batch = self.batch_of(input)?;
        let c = self.config.n_instances;
        let token_dim = self.config.representation.token_dim();

        let (wave_feats, wave_cache) = if self.config.representation.uses_wave() {
            let (f, cache) = self.wave_features(input, batch, c)?;
            (Some(f), Some(cache))
        } else {
            (None, None)
        };
        let (spec_feats, spec_cache) = if self.config.representation.uses_spec() {
            let (f, cache) = self.spec_features(input, batch, c)?;
            (Some(f), Some(cache))
        } else {
            (None, None)
        };

        // tokens (batch, c, token_dim); dual mode is [wave || spec]
        let mut tokens = Array3::<S>::zeros((batch, c, token_dim));
        if let Some(w) = &wave_feats {
            for b in 0..batch {
                for k in 0..c {
                    tokens
                        .slice_mut(s![b, k, 0..FEATURE_DIM])
                        .assign(&w.row(b * c + k));
                }
            }
        }
        if let Some(sp) = &spec_feats {
            let off = token_dim - FEATURE_DIM;
            for b in 0..batch {
                for k in 0..c {
                    tokens
                        .slice_mut(s![b, k, off..off + FEATURE_DIM])
                        .assign(&sp.row(b * c + k));
                }
            }
        }

        let (z, fusion_cache) = self.fusion.forward(&tokens)?;
        let (logits, clf_cache) = self.classifier.forward(&z);
        Ok((
            logits,
            ModelCache {
                batch,
                wave: wave_cache,
                spec: spec_cache,
                fusion: fusion_cache,
                classifier: clf_cache,
            },
        ))
    }

    /// Probabilities for a batch (eval path).
    pub fn predict(&self, input: &ModelInput<S>) -> Result<Vec<f64>> {
        let (logits, _) = self.forward(input)?;
        Ok(logits.iter().map(|&l| sigmoid(l).to_f()).collect())
    }

    /// Backward pass from d(logits); accumulates parameter gradients and
    /// returns input gradients for the scratch branches.
    pub fn backward(
        &mut self,
        cache: &ModelCache<S>,
        dlogits: &Array1<S>,
    ) -> Result<InputGrads<S>> {
        let batch = cache.batch;
        let c = self.config.n_instances;
        let token_dim = self.config.representation.token_dim();

        let dz = self.classifier.backward(&cache.classifier, dlogits);
        let dtokens = self.fusion.backward(&cache.fusion, &dz);

        let mut grads = InputGrads { wave: None, spec: None };

        if self.config.representation.uses_wave() {
            let mut dfeats = Array2::<S>::zeros((batch * c, FEATURE_DIM));
            for b in 0..batch {
                for k in 0..c {
                    dfeats
                        .row_mut(b * c + k)
                        .assign(&dtokens.slice(s![b, k, 0..FEATURE_DIM]));
                }
            }
            match (self.wave.as_mut().unwrap(), cache.wave.as_ref().unwrap()) {
                (WaveBranch::Scratch(enc), WaveCacheKind::Scratch(wc)) => {
                    let dx = enc.backward(wc, &dfeats);
                    let (rows, len) = dx.dim();
                    debug_assert_eq!(rows, batch * c);
                    grads.wave =
                        Some(dx.into_shape_with_order((batch, c, len)).unwrap());
                }
                (WaveBranch::Adapter(ad), WaveCacheKind::Adapter(wc)) => {
                    ad.backward(wc, &dfeats);
                }
                _ => unreachable!("cache kind matches branch kind"),
            }
        }

        if self.config.representation.uses_spec() {
            let off = token_dim - FEATURE_DIM;
            let mut dfeats = Array2::<S>::zeros((batch * c, FEATURE_DIM));
            for b in 0..batch {
                for k in 0..c {
                    dfeats
                        .row_mut(b * c + k)
                        .assign(&dtokens.slice(s![b, k, off..off + FEATURE_DIM]));
                }
            }
            match (self.spec.as_mut().unwrap(), cache.spec.as_ref().unwrap()) {
                (SpecBranch::Scratch(enc), SpecCacheKind::Scratch(sc)) => {
                    let dx = enc.backward(sc, &dfeats);
                    let (rows, m, t) = dx.dim();
                    debug_assert_eq!(rows, batch * c);
                    grads.spec =
                        Some(dx.into_shape_with_order((batch, c, m, t)).unwrap());
                }
                (SpecBranch::Adapter(ad), SpecCacheKind::Adapter(sc)) => {
                    ad.backward(sc, &dfeats);
                }
                _ => unreachable!("cache kind matches branch kind"),
            }
        }

        Ok(grads)
    }
}

impl<S: Scalar> Net<S> for ExperimentModel<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        match &mut self.wave {
            Some(WaveBranch::Scratch(enc)) => enc.visit_params(&scoped(prefix, "wave_enc"), f),
            Some(WaveBranch::Adapter(ad)) => ad.visit_params(&scoped(prefix, "wave_enc"), f),
            None => {}
        }
        match &mut self.spec {
            Some(SpecBranch::Scratch(enc)) => enc.visit_params(&scoped(prefix, "spec_enc"), f),
            Some(SpecBranch::Adapter(ad)) => ad.visit_params(&scoped(prefix, "spec_enc"), f),
            None => {}
        }
        self.fusion.visit_params(&scoped(prefix, "fusion"), f);
        self.classifier.visit_params(&scoped(prefix, "classifier"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{SpecEncoderConfig, WaveEncoderConfig};

    fn micro_config(repr: Representation, c: usize, attention: bool) -> ModelConfig {
        let wave = WaveEncoderConfig {
            channels: vec![4, 8],
            kernels: vec![8, 4],
            strides: vec![8, 4],
            input_len: 256,
            ..Default::default()
        };
        let spec = SpecEncoderConfig {
            n_mels: 16,
            n_frames: 20,
            patch: 8,
            embed_dim: 16,
            layers: 1,
            heads: 2,
            mlp_hidden: 32,
            ..Default::default()
        };
        ModelConfig {
            representation: repr,
            n_instances: c,
            wave_backbone: repr.uses_wave().then(|| WaveBackbone::ScratchConv(wave)),
            spec_backbone: repr.uses_spec().then(|| SpecBackbone::ScratchPatchTransformer(spec)),
            fusion: FusionConfig { attention, heads: 4, mlp_hidden: 32, instance_embedding: false },
        }
    }

    #[test]
    fn dual_model_runs_forward_and_backward() {
        let cfg = micro_config(Representation::Dual, 3, true);
        let mut model = ExperimentModel::<f64>::new(cfg, RngSeed(7)).unwrap();
        let input = ModelInput {
            wave: Some(Array3::from_shape_fn((2, 3, 256), |(b, c, i)| {
                ((b + c + i) % 11) as f64 * 0.05 - 0.25
            })),
            spec: Some(Array4::from_shape_fn((2, 3, 16, 20), |(b, c, m, t)| {
                ((b * 3 + c + m + t) % 7) as f64 * 0.2 - 0.6
            })),
            ..Default::default()
        };
        let (logits, cache) = model.forward(&input).unwrap();
        assert_eq!(logits.len(), 2);
        let dlogits = Array1::from_elem(2, 0.5);
        let grads = model.backward(&cache, &dlogits).unwrap();
        assert_eq!(grads.wave.as_ref().unwrap().dim(), (2, 3, 256));
        assert_eq!(grads.spec.as_ref().unwrap().dim(), (2, 3, 16, 20));
    }

    /// Encoder weights are shared across instances: parameter names (and
    /// counts) do not depend on the instance count.
    #[test]
    fn encoder_parameters_do_not_scale_with_instances() {
        let mut m2 =
            ExperimentModel::<f32>::new(micro_config(Representation::Dual, 2, true), RngSeed(1))
                .unwrap();
        let mut m7 =
            ExperimentModel::<f32>::new(micro_config(Representation::Dual, 7, true), RngSeed(1))
                .unwrap();
        let enc_names = |names: Vec<String>| -> Vec<String> {
            names.into_iter().filter(|n| !n.starts_with("fusion.fc1")).collect()
        };
        let n2 = enc_names(crate::nn::param_names(&mut m2));
        let n7 = enc_names(crate::nn::param_names(&mut m7));
        assert_eq!(n2, n7);
    }

    #[test]
    fn missing_input_is_contract_error() {
        let cfg = micro_config(Representation::Waveform, 2, true);
        let model = ExperimentModel::<f32>::new(cfg, RngSeed(2)).unwrap();
        let input = ModelInput::default();
        assert!(model.forward(&input).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = micro_config(Representation::Dual, 2, true);
        cfg.wave_backbone = None;
        assert!(ExperimentModel::<f32>::new(cfg, RngSeed(3)).is_err());
    }
}
