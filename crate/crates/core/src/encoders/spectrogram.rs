//! Spectrogram feature extraction: 16x16 patch embedding, a small
//! pre-norm transformer encoder with a class token, identity head, and an
//! affine projection to 128 dimensions.

use ndarray::{Array2, Array3, Ix1, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::attention::{MsaCache, MultiheadSelfAttention};
use crate::nn::layernorm::{LayerNorm, LayerNormCache};
use crate::nn::linear::Linear;
use crate::nn::ops::{gelu_backward, gelu_map};
use crate::nn::{scoped, Net, Param};
use crate::scalar::Scalar;

use super::{FeatureVector, FEATURE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecEncoderConfig {
    pub n_mels: usize,
    pub n_frames: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub frozen_backbone: bool,
}

impl Default for SpecEncoderConfig {
    fn default() -> Self {
        SpecEncoderConfig {
            n_mels: 128,
            n_frames: 173,
            patch: 16,
            embed_dim: 128,
            layers: 4,
            heads: 4,
            mlp_hidden: 256,
            frozen_backbone: false,
        }
    }
}

impl SpecEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.patch == 0 || self.layers == 0 {
            return Err(Error::Config("patch size and layer count must be positive".into()));
        }
        Ok(())
    }

    pub fn patches_freq(&self) -> usize {
        self.n_mels.div_ceil(self.patch)
    }

    pub fn patches_time(&self) -> usize {
        self.n_frames.div_ceil(self.patch)
    }

    /// Patch count after zero-padding each axis to a multiple of the patch
    /// size: 8 x 11 = 88 for the standard 128 x 173 input.
    pub fn n_patches(&self) -> usize {
        self.patches_freq() * self.patches_time()
    }

    /// Tokens per sample including the class token.
    pub fn n_tokens(&self) -> usize {
        self.n_patches() + 1
    }
}

struct Block<S> {
    ln1: LayerNorm<S>,
    attn: MultiheadSelfAttention<S>,
    attn_proj: Linear<S>,
    ln2: LayerNorm<S>,
    fc1: Linear<S>,
    fc2: Linear<S>,
}

struct BlockCache<S> {
    d: usize,
    ln1: LayerNormCache<S>,
    msa: MsaCache<S>,
    attn_out: Array2<S>,
    ln2: LayerNormCache<S>,
    b_norm: Array2<S>,
    h_pre: Array2<S>,
    h_act: Array2<S>,
}

impl<S: Scalar> Block<S> {
    fn new<R: Rng>(cfg: &SpecEncoderConfig, rng: &mut R) -> Result<Self> {
        Ok(Block {
            ln1: LayerNorm::new(cfg.embed_dim),
            attn: MultiheadSelfAttention::new(cfg.embed_dim, cfg.heads, rng)?,
            attn_proj: Linear::new(cfg.embed_dim, cfg.embed_dim, rng),
            ln2: LayerNorm::new(cfg.embed_dim),
            fc1: Linear::new(cfg.embed_dim, cfg.mlp_hidden, rng),
            fc2: Linear::new(cfg.mlp_hidden, cfg.embed_dim, rng),
        })
    }

    /// x: (batch*n, d) with token count n per sample.
    fn forward(&self, x: &Array2<S>, batch: usize, n: usize) -> (Array2<S>, BlockCache<S>) {
        let d = x.dim().1;
        let (a, ln1_cache) = self.ln1.forward(x);
        let a3 = a.view().into_shape_with_order((batch, n, d)).unwrap().to_owned();
        let (y3, msa) = self.attn.forward(&a3);
        let attn_out = y3.into_shape_with_order((batch * n, d)).unwrap();
        let proj = self.attn_proj.forward(&attn_out);
        let x_mid = x + &proj;

        let (b_norm, ln2_cache) = self.ln2.forward(&x_mid);
        let h_pre = self.fc1.forward(&b_norm);
        let h_act = gelu_map(&h_pre);
        let h2 = self.fc2.forward(&h_act);
        let x_out = &x_mid + &h2;
        (
            x_out,
            BlockCache {
                d,
                ln1: ln1_cache,
                msa,
                attn_out,
                ln2: ln2_cache,
                b_norm,
                h_pre,
                h_act,
            },
        )
    }

    fn backward(
        &mut self,
        cache: &BlockCache<S>,
        dy: &Array2<S>,
        batch: usize,
        n: usize,
    ) -> Array2<S> {
        let d = cache.d;
        // MLP branch
        let dh_act = self.fc2.backward(&cache.h_act, dy);
        let dh_pre = gelu_backward(&cache.h_pre, &dh_act);
        let db_norm = self.fc1.backward(&cache.b_norm, &dh_pre);
        let mut dx_mid = self.ln2.backward(&cache.ln2, &db_norm);
        dx_mid += dy; // residual

        // attention branch
        let dattn_out = self.attn_proj.backward(&cache.attn_out, &dx_mid);
        let dattn3 = dattn_out.into_shape_with_order((batch, n, d)).unwrap();
        let da3 = self.attn.backward(&cache.msa, &dattn3);
        let da = da3.into_shape_with_order((batch * n, d)).unwrap();
        let mut dx = self.ln1.backward(&cache.ln1, &da);
        dx += &dx_mid; // residual
        dx
    }
}

impl<S: Scalar> Net<S> for Block<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.ln1.visit_params(&scoped(prefix, "ln1"), f);
        self.attn.visit_params(&scoped(prefix, "attn"), f);
        self.attn_proj.visit_params(&scoped(prefix, "attn_proj"), f);
        self.ln2.visit_params(&scoped(prefix, "ln2"), f);
        self.fc1.visit_params(&scoped(prefix, "fc1"), f);
        self.fc2.visit_params(&scoped(prefix, "fc2"), f);
    }
}

pub struct SpectrogramEncoder<S> {
    pub cfg: SpecEncoderConfig,
    patch_proj: Linear<S>,
    cls: Param<S>,
    pos: Param<S>,
    blocks: Vec<Block<S>>,
    ln_final: LayerNorm<S>,
    proj: Linear<S>,
}

pub struct SpecEncoderCache<S> {
    patches: Array2<S>,
    block_caches: Vec<BlockCache<S>>,
    ln_final: LayerNormCache<S>,
    cls_rows: Array2<S>,
    batch: usize,
}

impl<S: Scalar> SpectrogramEncoder<S> {
    pub fn new<R: Rng>(cfg: SpecEncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let patch_dim = cfg.patch * cfg.patch;
        let patch_proj = Linear::new(patch_dim, cfg.embed_dim, rng);
        let cls = Param::normal(&[cfg.embed_dim], 0.02, rng);
        let pos = Param::normal(&[cfg.n_tokens(), cfg.embed_dim], 0.02, rng);
        let mut blocks = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            blocks.push(Block::new(&cfg, rng)?);
        }
        let ln_final = LayerNorm::new(cfg.embed_dim);
        let proj = Linear::new(cfg.embed_dim, FEATURE_DIM, rng);
        Ok(SpectrogramEncoder { cfg, patch_proj, cls, pos, blocks, ln_final, proj })
    }

    /// Flatten 16x16 patches row-major, zero-padding the time axis.
    fn extract_patches(&self, x: &Array3<S>) -> Array2<S> {
        let (batch, n_mels, n_frames) = x.dim();
        let p = self.cfg.patch;
        let (pf, pt) = (self.cfg.patches_freq(), self.cfg.patches_time());
        let mut out = Array2::<S>::zeros((batch * pf * pt, p * p));
        for b in 0..batch {
            for i in 0..pf {
                for j in 0..pt {
                    let row = b * pf * pt + i * pt + j;
                    for di in 0..p {
                        let m = i * p + di;
                        if m >= n_mels {
                            continue;
                        }
                        for dj in 0..p {
                            let t = j * p + dj;
                            if t >= n_frames {
                                continue;
                            }
                            out[(row, di * p + dj)] = x[(b, m, t)];
                        }
                    }
                }
            }
        }
        out
    }

    /// x: (batch, n_mels, n_frames) -> (batch, 128).
    pub fn forward(&self, x: &Array3<S>) -> Result<(Array2<S>, SpecEncoderCache<S>)> {
        let (batch, n_mels, n_frames) = x.dim();
        if n_mels != self.cfg.n_mels || n_frames != self.cfg.n_frames {
            return Err(Error::Contract(format!(
                "spectrogram encoder expects {} x {}, got {n_mels} x {n_frames}",
                self.cfg.n_mels, self.cfg.n_frames
            )));
        }
        let n_patches = self.cfg.n_patches();
        let n = self.cfg.n_tokens();
        let d = self.cfg.embed_dim;

        let patches = self.extract_patches(x);
        let emb = self.patch_proj.forward(&patches); // (batch*patches, d)

        let mut tokens = Array2::<S>::zeros((batch * n, d));
        let cls = self.cls.v1();
        let pos = self.pos.v2();
        for b in 0..batch {
            for j in 0..d {
                tokens[(b * n, j)] = cls[j] + pos[(0, j)];
            }
            for t in 0..n_patches {
                for j in 0..d {
                    tokens[(b * n + 1 + t, j)] = emb[(b * n_patches + t, j)] + pos[(t + 1, j)];
                }
            }
        }

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&tokens, batch, n);
            block_caches.push(cache);
            tokens = next;
        }

        let (normed, ln_final) = self.ln_final.forward(&tokens);
        let mut cls_rows = Array2::<S>::zeros((batch, d));
        for b in 0..batch {
            cls_rows.row_mut(b).assign(&normed.row(b * n));
        }
        let out = self.proj.forward(&cls_rows);
        Ok((
            out,
            SpecEncoderCache {
                patches,
                block_caches,
                ln_final,
                cls_rows,
                batch,
            },
        ))
    }

    /// Returns d(input) of shape (batch, n_mels, n_frames).
    pub fn backward(&mut self, cache: &SpecEncoderCache<S>, dy: &Array2<S>) -> Array3<S> {
        let batch = cache.batch;
        let n = self.cfg.n_tokens();
        let n_patches = self.cfg.n_patches();
        let d = self.cfg.embed_dim;
        let frozen = self.cfg.frozen_backbone;

        let d_cls_rows = self.proj.backward(&cache.cls_rows, dy);
        let mut d_normed = Array2::<S>::zeros((batch * n, d));
        for b in 0..batch {
            d_normed.row_mut(b * n).assign(&d_cls_rows.row(b));
        }
        let mut dtokens = self.ln_final.backward(&cache.ln_final, &d_normed);

        for (block, bc) in self.blocks.iter_mut().zip(cache.block_caches.iter()).rev() {
            dtokens = block.backward(bc, &dtokens, batch, n);
        }

        // split gradient into cls / pos / patch embeddings
        if !frozen {
            let mut gcls = self.cls.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            let mut gpos = self.pos.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            for b in 0..batch {
                for j in 0..d {
                    gcls[j] += dtokens[(b * n, j)];
                    gpos[(0, j)] += dtokens[(b * n, j)];
                }
                for t in 0..n_patches {
                    for j in 0..d {
                        gpos[(t + 1, j)] += dtokens[(b * n + 1 + t, j)];
                    }
                }
            }
        }

        let mut demb = Array2::<S>::zeros((batch * n_patches, d));
        for b in 0..batch {
            for t in 0..n_patches {
                demb.row_mut(b * n_patches + t).assign(&dtokens.row(b * n + 1 + t));
            }
        }
        let dpatches = self.patch_proj.backward(&cache.patches, &demb);

        // scatter patches back to the (padded) input grid
        let p = self.cfg.patch;
        let (pf, pt) = (self.cfg.patches_freq(), self.cfg.patches_time());
        let mut dx = Array3::<S>::zeros((batch, self.cfg.n_mels, self.cfg.n_frames));
        for b in 0..batch {
            for i in 0..pf {
                for j in 0..pt {
                    let row = b * pf * pt + i * pt + j;
                    for di in 0..p {
                        let m = i * p + di;
                        if m >= self.cfg.n_mels {
                            continue;
                        }
                        for dj in 0..p {
                            let t = j * p + dj;
                            if t >= self.cfg.n_frames {
                                continue;
                            }
                            dx[(b, m, t)] = dpatches[(row, di * p + dj)];
                        }
                    }
                }
            }
        }
        dx
    }

    /// Standardized single-spectrogram contract: shape check, 128-d output.
    pub fn encode(&self, values: &Array2<S>) -> Result<FeatureVector<S>> {
        let x = values
            .view()
            .into_shape_with_order((1, values.nrows(), values.ncols()))
            .unwrap()
            .to_owned();
        let (y, _) = self.forward(&x)?;
        FeatureVector::new(y.row(0).to_owned())
    }
}

/// Standardize a spectrogram to zero mean, unit variance (applied before
/// patch embedding so raw dB offsets do not swamp the initialization).
pub fn standardize<S: Scalar>(values: &Array2<S>) -> Array2<S> {
    let n = S::from_us(values.len());
    let mean = values.sum() / n;
    let var = values.mapv(|v| (v - mean) * (v - mean)).sum() / n;
    let std = (var + S::from_f(1e-8)).sqrt();
    values.mapv(|v| (v - mean) / std)
}

impl<S: Scalar> Net<S> for SpectrogramEncoder<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        if !self.cfg.frozen_backbone {
            self.patch_proj.visit_params(&scoped(prefix, "patch_proj"), f);
            f(&scoped(prefix, "cls"), &mut self.cls);
            f(&scoped(prefix, "pos"), &mut self.pos);
            for (i, block) in self.blocks.iter_mut().enumerate() {
                block.visit_params(&scoped(prefix, &format!("block{i}")), f);
            }
            self.ln_final.visit_params(&scoped(prefix, "ln_final"), f);
        }
        self.proj.visit_params(&scoped(prefix, "proj"), f);
    }
}

/// Adapter over precomputed single-vector embeddings (t = 1, d = 384 for
/// the standard external backbone): an affine projection to 128.
#[derive(Debug, Clone)]
pub struct SpectrogramAdapter<S> {
    pub feature_dim: usize,
    proj: Linear<S>,
}

pub struct SpecAdapterCache<S> {
    x: Array2<S>,
}

impl<S: Scalar> SpectrogramAdapter<S> {
    pub fn new<R: Rng>(feature_dim: usize, rng: &mut R) -> Self {
        SpectrogramAdapter { feature_dim, proj: Linear::new(feature_dim, FEATURE_DIM, rng) }
    }

    /// x: (batch, feature_dim) -> (batch, 128).
    pub fn forward(&self, x: &Array2<S>) -> Result<(Array2<S>, SpecAdapterCache<S>)> {
        if x.dim().1 != self.feature_dim {
            return Err(Error::Contract(format!(
                "spectrogram adapter expects {}-d features, got {}",
                self.feature_dim,
                x.dim().1
            )));
        }
        let y = self.proj.forward(x);
        Ok((y, SpecAdapterCache { x: x.clone() }))
    }

    pub fn backward(&mut self, cache: &SpecAdapterCache<S>, dy: &Array2<S>) {
        self.proj.backward(&cache.x, dy);
    }
}

impl<S: Scalar> Net<S> for SpectrogramAdapter<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.proj.visit_params(&scoped(prefix, "proj"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, RngSeed};

    #[test]
    fn standard_input_has_88_patches() {
        let cfg = SpecEncoderConfig::default();
        assert_eq!(cfg.patches_freq(), 8);
        assert_eq!(cfg.patches_time(), 11);
        assert_eq!(cfg.n_patches(), 88);
        assert_eq!(cfg.n_tokens(), 89);
    }

    #[test]
    fn output_dimension_is_128_and_eval_is_deterministic() {
        let mut rng = stream(RngSeed(1), "spec", &[], &[]);
        let cfg = SpecEncoderConfig {
            layers: 2,
            embed_dim: 32,
            heads: 2,
            mlp_hidden: 64,
            ..Default::default()
        };
        let enc = SpectrogramEncoder::<f32>::new(cfg, &mut rng).unwrap();
        let x = Array3::from_shape_fn((2, 128, 173), |(b, m, t)| {
            ((b + m * 7 + t * 3) % 23) as f32 * 0.1 - 1.0
        });
        let (y1, _) = enc.forward(&x).unwrap();
        let (y2, _) = enc.forward(&x).unwrap();
        assert_eq!(y1.dim(), (2, 128));
        assert_eq!(y1, y2);
        // identical inputs give identical features
        let same = Array3::from_shape_fn((2, 128, 173), |(_, m, t)| x[(0, m, t)]);
        let (y3, _) = enc.forward(&same).unwrap();
        let r0 = y3.row(0).to_owned();
        let r1 = y3.row(1).to_owned();
        assert_eq!(r0, r1);
    }

    #[test]
    fn wrong_shape_is_contract_error() {
        let mut rng = stream(RngSeed(2), "spec", &[], &[]);
        let enc =
            SpectrogramEncoder::<f32>::new(SpecEncoderConfig::default(), &mut rng).unwrap();
        let x = Array3::zeros((1, 64, 173));
        assert!(matches!(enc.forward(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn adapter_projects_384_to_128() {
        let mut rng = stream(RngSeed(3), "spec", &[], &[]);
        let adapter = SpectrogramAdapter::<f32>::new(384, &mut rng);
        let x = Array2::from_shape_fn((3, 384), |_| rng.gen_range(-1.0f32..1.0));
        let (y, _) = adapter.forward(&x).unwrap();
        assert_eq!(y.dim(), (3, 128));
        let bad = Array2::<f32>::zeros((3, 100));
        assert!(adapter.forward(&bad).is_err());
    }

    #[test]
    fn standardize_centers_and_scales() {
        let mut rng = stream(RngSeed(4), "spec", &[], &[]);
        let x = Array2::from_shape_fn((16, 16), |_| rng.gen_range(-40.0f64..10.0));
        let z = standardize(&x);
        let mean: f64 = z.iter().sum::<f64>() / z.len() as f64;
        let var: f64 = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
