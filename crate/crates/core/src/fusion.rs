//! The fusion unit: per-instance dual-representation tokens, multiheaded
//! self-attention across instances, concatenation, and an MLP projecting to
//! the 128-d joint feature, plus the logistic classifier head.

use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::attention::{MsaCache, MultiheadSelfAttention};
use crate::nn::linear::Linear;
use crate::nn::ops::{gelu_backward, gelu_map, sigmoid};
use crate::nn::{scoped, Net, Param};
use crate::scalar::Scalar;

pub use crate::nn::attention::MsaCache as AttentionWeights;

/// Per-subject instance tokens: (c, token_dim). 256-d in dual-representation
/// mode (128 waveform + 128 spectrogram), 128-d in single-representation
/// mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet<S> {
    pub tokens: Array2<S>,
}

impl<S: Scalar> TokenSet<S> {
    pub fn new(tokens: Array2<S>) -> Result<Self> {
        if tokens.nrows() == 0 {
            return Err(Error::Contract("token set needs at least one instance".into()));
        }
        Ok(TokenSet { tokens })
    }

    pub fn n_instances(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// token k = [wave_k || spec_k], order fixed.
pub fn concat_instance_features<S: Scalar>(
    wave_feats: &Array2<S>,
    spec_feats: &Array2<S>,
) -> Result<TokenSet<S>> {
    if wave_feats.nrows() != spec_feats.nrows() {
        return Err(Error::Contract(format!(
            "instance count mismatch: {} waveform vs {} spectrogram",
            wave_feats.nrows(),
            spec_feats.nrows()
        )));
    }
    let c = wave_feats.nrows();
    let (dw, ds) = (wave_feats.ncols(), spec_feats.ncols());
    let mut tokens = Array2::zeros((c, dw + ds));
    tokens.slice_mut(s![.., 0..dw]).assign(wave_feats);
    tokens.slice_mut(s![.., dw..dw + ds]).assign(spec_feats);
    TokenSet::new(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Self-attention across instance tokens; false for the single-instance
    /// baselines, which reduce to encoder + MLP + classifier.
    pub attention: bool,
    /// Optional learned per-instance embedding added to tokens (off by
    /// default; there is no positional encoding on fusion tokens).
    pub instance_embedding: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { heads: 4, mlp_hidden: 256, attention: true, instance_embedding: false }
    }
}

/// Joint feature dimension produced by the fusion MLP.
pub const JOINT_DIM: usize = 128;

pub struct FusionUnit<S> {
    pub cfg: FusionConfig,
    pub n_instances: usize,
    pub token_dim: usize,
    attn: Option<MultiheadSelfAttention<S>>,
    inst_emb: Option<Param<S>>,
    fc1: Linear<S>,
    fc2: Linear<S>,
}

pub struct FusionCache<S> {
    msa: Option<MsaCache<S>>,
    flat: Array2<S>,
    h_pre: Array2<S>,
    h_act: Array2<S>,
    batch: usize,
}

impl<S: Scalar> FusionCache<S> {
    /// Attention weights of the fusion pass, when attention is enabled.
    pub fn attention_weights(&self) -> Option<&MsaCache<S>> {
        self.msa.as_ref()
    }
}

impl<S: Scalar> FusionUnit<S> {
    pub fn new<R: Rng>(
        cfg: FusionConfig,
        n_instances: usize,
        token_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_instances == 0 {
            return Err(Error::Config("fusion needs at least one instance".into()));
        }
        let attn = if cfg.attention {
            Some(MultiheadSelfAttention::new(token_dim, cfg.heads, rng)?)
        } else {
            None
        };
        let inst_emb = if cfg.instance_embedding {
            Some(Param::normal(&[n_instances, token_dim], 0.02, rng))
        } else {
            None
        };
        let fc1 = Linear::new(n_instances * token_dim, cfg.mlp_hidden, rng);
        let fc2 = Linear::new(cfg.mlp_hidden, JOINT_DIM, rng);
        Ok(FusionUnit { cfg, n_instances, token_dim, attn, inst_emb, fc1, fc2 })
    }

    /// Flattened width fed to the MLP: c * token_dim.
    pub fn flatten_len(&self) -> usize {
        self.n_instances * self.token_dim
    }

    /// tokens: (batch, c, token_dim) -> joint features (batch, 128).
    pub fn forward(&self, tokens: &Array3<S>) -> Result<(Array2<S>, FusionCache<S>)> {
        let (batch, c, dim) = tokens.dim();
        if c != self.n_instances || dim != self.token_dim {
            return Err(Error::Contract(format!(
                "fusion expects {} x {} tokens, got {c} x {dim}",
                self.n_instances, self.token_dim
            )));
        }
        let mut x = tokens.clone();
        if let Some(emb) = &self.inst_emb {
            let e = emb.v2();
            for b in 0..batch {
                let mut t = x.slice_mut(s![b, .., ..]);
                t += &e;
            }
        }
        let (attended, msa) = match &self.attn {
            Some(attn) => {
                let (y, cache) = attn.forward(&x);
                (y, Some(cache))
            }
            None => (x, None),
        };
        let flat = attended.into_shape_with_order((batch, c * dim)).unwrap();
        let h_pre = self.fc1.forward(&flat);
        let h_act = gelu_map(&h_pre);
        let z = self.fc2.forward(&h_act);
        Ok((z, FusionCache { msa, flat, h_pre, h_act, batch }))
    }

    /// Returns d(tokens) of shape (batch, c, token_dim).
    pub fn backward(&mut self, cache: &FusionCache<S>, dz: &Array2<S>) -> Array3<S> {
        let (batch, c, dim) = (cache.batch, self.n_instances, self.token_dim);
        let dh_act = self.fc2.backward(&cache.h_act, dz);
        let dh_pre = gelu_backward(&cache.h_pre, &dh_act);
        let dflat = self.fc1.backward(&cache.flat, &dh_pre);
        let dattended = dflat.into_shape_with_order((batch, c, dim)).unwrap();
        let dx = match (&mut self.attn, &cache.msa) {
            (Some(attn), Some(msa)) => attn.backward(msa, &dattended),
            _ => dattended,
        };
        if let Some(emb) = &mut self.inst_emb {
            let mut g = emb.grad.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            for b in 0..batch {
                g += &dx.slice(s![b, .., ..]);
            }
        }
        dx
    }
}

impl<S: Scalar> Net<S> for FusionUnit<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        if let Some(attn) = &mut self.attn {
            attn.visit_params(&scoped(prefix, "attn"), f);
        }
        if let Some(emb) = &mut self.inst_emb {
            f(&scoped(prefix, "inst_emb"), emb);
        }
        self.fc1.visit_params(&scoped(prefix, "fc1"), f);
        self.fc2.visit_params(&scoped(prefix, "fc2"), f);
    }
}

/// Affine map to a single logit followed by the logistic sigmoid.
pub struct Classifier<S> {
    lin: Linear<S>,
}

pub struct ClassifierCache<S> {
    z: Array2<S>,
}

impl<S: Scalar> Classifier<S> {
    pub fn new<R: Rng>(in_dim: usize, rng: &mut R) -> Self {
        Classifier { lin: Linear::new(in_dim, 1, rng) }
    }

    /// z: (batch, 128) -> logits (batch,).
    pub fn forward(&self, z: &Array2<S>) -> (Array1<S>, ClassifierCache<S>) {
        let y = self.lin.forward(z);
        (y.column(0).to_owned(), ClassifierCache { z: z.clone() })
    }

    pub fn backward(&mut self, cache: &ClassifierCache<S>, dlogits: &Array1<S>) -> Array2<S> {
        let dy = dlogits
            .view()
            .into_shape_with_order((dlogits.len(), 1))
            .unwrap()
            .to_owned();
        self.lin.backward(&cache.z, &dy)
    }

    /// Predicted probability for a single joint feature vector.
    pub fn classify(&self, z: &Array1<S>) -> f64 {
        let x = z.view().into_shape_with_order((1, z.len())).unwrap().to_owned();
        let (logits, _) = self.forward(&x);
        sigmoid(logits[0]).to_f()
    }
}

impl<S: Scalar> Net<S> for Classifier<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.lin.visit_params(&scoped(prefix, "head"), f);
    }
}
