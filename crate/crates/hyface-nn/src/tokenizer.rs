//! Multi-scale appearance tokenizer.
//!
//! A K-stage stride-2 convolutional backbone over the input image; after
//! each stage the feature map is globally average-pooled and linearly
//! projected to a d-dimensional sub-token `z_i`. The appearance token is the
//! ordered list `z_1..z_K` (shallow to deep); its flat form is the
//! channel-wise concatenation in scale order.
//!
//! Projections are bias-free and zero-initialized by default, so an
//! untrained tokenizer emits exactly zero tokens; both choices are
//! configurable for tests and ablations.

use candle_core::Tensor;
use candle_nn::{Linear, Module};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{global_avg_pool, linear, prepare_input, ConvBackbone};
use crate::store::{Init, ParamStore};

/// Tokenizer architecture. `stage_channels.len()` is the scale count K.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MfatConfig {
    /// Expected square input resolution; other sizes are rejected unless
    /// `allow_resize` is set.
    pub input_resolution: usize,
    /// Output channels of each backbone stage (each stage halves the
    /// spatial resolution).
    pub stage_channels: Vec<usize>,
    /// Sub-token dimension d.
    pub token_dim: usize,
    /// Give the per-stage projections a bias term.
    pub projection_bias: bool,
    /// Zero-initialize the projections (tokens start at exactly zero).
    pub zero_init_projection: bool,
    /// Resize wrong-resolution inputs (nearest-neighbor) instead of
    /// rejecting them. Inference convenience only.
    pub allow_resize: bool,
}

impl Default for MfatConfig {
    fn default() -> Self {
        MfatConfig {
            input_resolution: 224,
            stage_channels: vec![16, 32, 64, 128],
            token_dim: 256,
            projection_bias: false,
            zero_init_projection: true,
            allow_resize: false,
        }
    }
}

impl MfatConfig {
    /// Scale count K.
    pub fn k(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(Error::Config("tokenizer needs at least one stage".into()));
        }
        if self.token_dim == 0 {
            return Err(Error::Config("token dimension must be positive".into()));
        }
        // Every stage halves the resolution; the deepest map must keep at
        // least one pixel.
        let min_res = 1 << self.k();
        if self.input_resolution < min_res {
            return Err(Error::Config(format!(
                "input resolution {} too small for {} stride-2 stages (need >= {min_res})",
                self.input_resolution,
                self.k()
            )));
        }
        Ok(())
    }
}

/// Ordered per-scale sub-tokens, each `(batch, d)`.
#[derive(Debug, Clone)]
pub struct AppearanceToken {
    sub_tokens: Vec<Tensor>,
}

impl AppearanceToken {
    pub fn new(sub_tokens: Vec<Tensor>) -> Result<Self> {
        if sub_tokens.is_empty() {
            return Err(Error::Validation("token needs at least one scale".into()));
        }
        let dims = sub_tokens[0].dims().to_vec();
        if dims.len() != 2 {
            return Err(Error::Validation(format!(
                "sub-tokens must be (batch, d), got {dims:?}"
            )));
        }
        for (i, z) in sub_tokens.iter().enumerate() {
            if z.dims() != dims {
                return Err(Error::Validation(format!(
                    "sub-token {i} has shape {:?}, expected {dims:?}",
                    z.dims()
                )));
            }
        }
        Ok(AppearanceToken { sub_tokens })
    }

    /// Scale count K.
    pub fn k(&self) -> usize {
        self.sub_tokens.len()
    }

    /// Per-scale dimension d.
    pub fn dim(&self) -> usize {
        self.sub_tokens[0].dims()[1]
    }

    pub fn batch(&self) -> usize {
        self.sub_tokens[0].dims()[0]
    }

    /// Sub-tokens in scale order (shallow first).
    pub fn sub_tokens(&self) -> &[Tensor] {
        &self.sub_tokens
    }

    /// Channel-wise concatenation in scale order: `(batch, K * d)`.
    pub fn concat(&self) -> Result<Tensor> {
        let refs: Vec<&Tensor> = self.sub_tokens.iter().collect();
        Ok(Tensor::cat(&refs, 1)?)
    }

    /// Token with the autodiff graph cut (for use as a comparison target).
    pub fn detach(&self) -> Self {
        AppearanceToken {
            sub_tokens: self.sub_tokens.iter().map(|z| z.detach()).collect(),
        }
    }

    /// Rebuild from a flat `(batch, K * d)` concatenation.
    pub fn from_concat(concat: &Tensor, k: usize) -> Result<Self> {
        let (_b, kd) = concat.dims2()?;
        if k == 0 || kd % k != 0 {
            return Err(Error::Validation(format!(
                "cannot split width {kd} into {k} equal sub-tokens"
            )));
        }
        let d = kd / k;
        let sub_tokens = (0..k)
            .map(|i| concat.narrow(1, i * d, d))
            .collect::<candle_core::Result<Vec<_>>>()?;
        AppearanceToken::new(sub_tokens)
    }
}

/// The tokenizer network. Weights live in the owning [`ParamStore`] under
/// `{prefix}.stage{i}.*` / `{prefix}.project{i}.*`.
pub struct Mfat {
    config: MfatConfig,
    backbone: ConvBackbone,
    projections: Vec<Linear>,
}

impl Mfat {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &MfatConfig) -> Result<Self> {
        config.validate()?;
        let backbone = ConvBackbone::new(store, prefix, 3, &config.stage_channels)?;
        let mut projections = Vec::with_capacity(config.k());
        for (i, &out_c) in config.stage_channels.iter().enumerate() {
            let init = if config.zero_init_projection {
                Some(Init::Zeros)
            } else {
                None
            };
            projections.push(linear(
                store,
                &format!("{prefix}.project{i}"),
                out_c,
                config.token_dim,
                config.projection_bias,
                init,
            )?);
        }
        Ok(Mfat {
            config: config.clone(),
            backbone,
            projections,
        })
    }

    pub fn config(&self) -> &MfatConfig {
        &self.config
    }

    /// Feature maps after every backbone stage, shallow to deep.
    pub fn stage_features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let x = prepare_input(images, self.config.input_resolution, self.config.allow_resize)?;
        self.backbone.forward_stages(&x)
    }

    /// Project stage-i features to the sub-token `z_i`: global average pool
    /// then the stage's linear projection.
    pub fn project_stage(&self, stage: usize, features: &Tensor) -> Result<Tensor> {
        let proj = self.projections.get(stage).ok_or_else(|| {
            Error::Validation(format!(
                "stage {stage} out of range (K = {})",
                self.config.k()
            ))
        })?;
        Ok(proj.forward(&global_avg_pool(features)?)?)
    }

    /// Tokenize a `(batch, 3, r, r)` image batch.
    pub fn tokenize(&self, images: &Tensor) -> Result<AppearanceToken> {
        self.tokenize_inner(images, None)
    }

    /// Tokenize with stage `stage`'s feature maps replaced by zeros — the
    /// zeroed features also feed the following stage, mirroring a dead
    /// branch mid-network. Diagnostic hook for the provenance property.
    pub fn tokenize_with_stage_zeroed(
        &self,
        images: &Tensor,
        stage: usize,
    ) -> Result<AppearanceToken> {
        if stage >= self.config.k() {
            return Err(Error::Validation(format!(
                "stage {stage} out of range (K = {})",
                self.config.k()
            )));
        }
        self.tokenize_inner(images, Some(stage))
    }

    fn tokenize_inner(&self, images: &Tensor, zero_stage: Option<usize>) -> Result<AppearanceToken> {
        let mut x = prepare_input(images, self.config.input_resolution, self.config.allow_resize)?;
        let mut sub_tokens = Vec::with_capacity(self.config.k());
        for i in 0..self.config.k() {
            x = self.backbone.stage_forward(i, &x)?;
            if zero_stage == Some(i) {
                x = x.zeros_like()?;
            }
            sub_tokens.push(self.project_stage(i, &x)?);
        }
        AppearanceToken::new(sub_tokens)
    }
}
