//! Small building blocks shared by the tokenizer, geometry encoders and
//! synthesizer: store-backed conv/linear constructors and a few stateless
//! tensor ops.
//!
//! Module weights are handed out by a [`ParamStore`], so every layer is
//! addressable by name for checkpointing, freeze hashing and optimizer
//! grouping. The returned candle modules hold clones of the store's
//! variables: optimizer updates through the store are visible to the module
//! on the next forward pass.

use candle_core::Tensor;
use candle_nn::{Conv2d, Conv2dConfig, Linear, Module};

use crate::error::{Error, Result};
use crate::store::{Init, ParamStore};

/// A `k x k` convolution (`weight` He-initialized unless overridden, `bias`
/// zero-initialized) registered under `{name}.weight` / `{name}.bias`.
pub fn conv2d(
    store: &mut ParamStore,
    name: &str,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    weight_init: Option<Init>,
) -> Result<Conv2d> {
    let init = weight_init.unwrap_or_else(|| Init::kaiming(in_c * k * k));
    let weight = store.get_or_init(&format!("{name}.weight"), &[out_c, in_c, k, k], init)?;
    let bias = store.get_or_init(&format!("{name}.bias"), &[out_c], Init::Zeros)?;
    let cfg = Conv2dConfig {
        padding,
        stride,
        ..Default::default()
    };
    Ok(Conv2d::new(
        weight.as_tensor().clone(),
        Some(bias.as_tensor().clone()),
        cfg,
    ))
}

/// A linear layer registered under `{name}.weight` (+ `.bias` when `bias`).
pub fn linear(
    store: &mut ParamStore,
    name: &str,
    in_dim: usize,
    out_dim: usize,
    bias: bool,
    weight_init: Option<Init>,
) -> Result<Linear> {
    let init = weight_init.unwrap_or_else(|| Init::kaiming(in_dim));
    let weight = store.get_or_init(&format!("{name}.weight"), &[out_dim, in_dim], init)?;
    let bias_t = if bias {
        Some(
            store
                .get_or_init(&format!("{name}.bias"), &[out_dim], Init::Zeros)?
                .as_tensor()
                .clone(),
        )
    } else {
        None
    };
    Ok(Linear::new(weight.as_tensor().clone(), bias_t))
}

/// A stack of stride-2 3x3 conv + ReLU stages, each halving the spatial
/// resolution — the shared desk-scale backbone of the tokenizer and the
/// geometry encoders. Stage `i` registers under `{prefix}.stage{i}.conv`.
pub struct ConvBackbone {
    convs: Vec<Conv2d>,
}

impl ConvBackbone {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        stage_channels: &[usize],
    ) -> Result<Self> {
        if stage_channels.is_empty() {
            return Err(Error::Config("backbone needs at least one stage".into()));
        }
        let mut convs = Vec::with_capacity(stage_channels.len());
        let mut in_c = in_channels;
        for (i, &out_c) in stage_channels.iter().enumerate() {
            convs.push(conv2d(
                store,
                &format!("{prefix}.stage{i}.conv"),
                in_c,
                out_c,
                3,
                2,
                1,
                None,
            )?);
            in_c = out_c;
        }
        Ok(ConvBackbone { convs })
    }

    /// Stage count K.
    pub fn k(&self) -> usize {
        self.convs.len()
    }

    /// Run stage `i` (conv + ReLU) on `x`.
    pub fn stage_forward(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let conv = self.convs.get(i).ok_or_else(|| {
            Error::Validation(format!("stage {i} out of range (K = {})", self.k()))
        })?;
        Ok(conv.forward(x)?.relu()?)
    }

    /// Feature maps after every stage, shallow to deep.
    pub fn forward_stages(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut cur = x.clone();
        let mut features = Vec::with_capacity(self.k());
        for i in 0..self.k() {
            cur = self.stage_forward(i, &cur)?;
            features.push(cur.clone());
        }
        Ok(features)
    }

    /// Deepest stage output, globally average-pooled: `(b, c_last)`.
    pub fn forward_pooled(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for i in 0..self.k() {
            cur = self.stage_forward(i, &cur)?;
        }
        global_avg_pool(&cur)
    }
}

/// Validate a `(batch, 3, h, w)` image batch against a square resolution,
/// optionally resizing (nearest-neighbor; inference convenience only).
pub fn prepare_input(images: &Tensor, resolution: usize, allow_resize: bool) -> Result<Tensor> {
    let (_b, c, h, w) = images.dims4()?;
    if c != 3 {
        return Err(Error::Validation(format!(
            "images must have 3 channels, got {c}"
        )));
    }
    if h == resolution && w == resolution {
        return Ok(images.clone());
    }
    if allow_resize {
        return Ok(images.upsample_nearest2d(resolution, resolution)?);
    }
    Err(Error::Validation(format!(
        "input resolution {h}x{w} does not match configured {resolution}x{resolution} (resizing disabled)"
    )))
}

/// Global average pooling: `(b, c, h, w)` → `(b, c)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (_b, _c, _h, _w) = x.dims4()?;
    Ok(x.mean(3)?.mean(2)?)
}

/// Per-channel instance normalization over the spatial axes:
/// `(x - mean) / sqrt(var + eps)` with biased variance, shape-preserving on
/// `(b, c, h, w)`.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let (b, c, _h, _w) = x.dims4()?;
    let mean = x.mean_keepdim(3)?.mean_keepdim(2)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?;
    let std = (var + eps)?.sqrt()?;
    debug_assert_eq!(mean.dims(), [b, c, 1, 1]);
    Ok(centered.broadcast_div(&std)?)
}

/// Mean absolute difference between two equally shaped tensors, as a scalar
/// tensor in the autodiff graph.
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Validation(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(a.sub(b)?.abs()?.mean_all()?)
}

/// L2 norm of `a - b` along the last axis collapsed over all entries:
/// `sqrt(sum((a - b)^2) + eps)` as a scalar tensor. The tiny `eps` keeps the
/// square-root differentiable at 0.
pub fn l2_norm_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Validation(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a.sub(b)?.sqr()?.sum_all()? + 1e-24)?.sqrt()?)
}

/// Run a module over a tensor (readability shim over candle's trait call).
pub fn apply<M: Module>(m: &M, x: &Tensor) -> Result<Tensor> {
    Ok(m.forward(x)?)
}
