//! Geometry encoders: three identical-architecture networks predicting the
//! head parameter groups from an image.
//!
//! - `E_beta`  → shape coefficients β
//! - `E_psi`   → expression group Ψ = (ψ, jaw rotation, eye closure)
//! - `E_theta` → pose group θ = (head rotation, weak-perspective camera)
//!
//! Each encoder is the shared stride-2 conv backbone plus a pooled linear
//! head. Heads are zero-initialized, so an untrained model predicts the
//! neutral head (all coefficients zero, camera scale ≈ 1, centered) — a
//! sensible starting render for landmark-driven fitting.
//!
//! The raw camera head output is mapped to `(s, t_x, t_y)` with
//! `s = softplus(raw + 0.5413) + 1e-3`, keeping the scale strictly positive
//! for any network output while starting at s ≈ 1.

use candle_core::Tensor;
use candle_nn::{Linear, Module};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use hyface_core::head::HeadParams;

use crate::error::{Error, Result};
use crate::layers::{linear, prepare_input, ConvBackbone};
use crate::store::{Init, ParamStore};

/// Raw-to-scale offset: `softplus(0.5413) ≈ 1`, so zero-initialized heads
/// start with a unit camera scale.
const CAM_SCALE_RAW_OFFSET: f64 = 0.5413;
/// Lower bound keeping the projected scale strictly positive.
const CAM_SCALE_FLOOR: f64 = 1e-3;

/// Architecture of the three geometry encoders (identical apart from head
/// widths).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Expected square input resolution.
    pub input_resolution: usize,
    /// Backbone stage channels (stride-2 each).
    pub stage_channels: Vec<usize>,
    /// Shape coefficient count (must match the rig).
    pub n_shape: usize,
    /// Expression coefficient count (must match the rig).
    pub n_expr: usize,
    /// Resize wrong-resolution inputs instead of rejecting them.
    pub allow_resize: bool,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            input_resolution: 224,
            stage_channels: vec![16, 32, 64, 128],
            n_shape: 8,
            n_expr: 8,
            allow_resize: false,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(Error::Config("encoder needs at least one stage".into()));
        }
        if self.n_shape == 0 || self.n_expr == 0 {
            return Err(Error::Config(
                "shape/expression coefficient counts must be positive".into(),
            ));
        }
        let min_res = 1 << self.stage_channels.len();
        if self.input_resolution < min_res {
            return Err(Error::Config(format!(
                "input resolution {} too small for {} stride-2 stages (need >= {min_res})",
                self.input_resolution,
                self.stage_channels.len()
            )));
        }
        Ok(())
    }

    /// Width of the expression group vector `[psi | theta_j | eye_b]`.
    pub fn psi_group_len(&self) -> usize {
        self.n_expr + 5
    }
}

/// Per-sample head parameter estimate as graph tensors, `(batch, ...)` each.
/// The camera is already mapped to `(s, t_x, t_y)` with `s > 0`.
#[derive(Debug, Clone)]
pub struct GeometryEstimate {
    pub beta: Tensor,
    pub psi: Tensor,
    pub theta_j: Tensor,
    pub eye_b: Tensor,
    pub theta_h: Tensor,
    pub cam: Tensor,
}

impl GeometryEstimate {
    pub fn batch(&self) -> usize {
        self.beta.dims()[0]
    }

    /// Flat parameter rows `[beta | psi | theta_j | eye_b | theta_h]`
    /// (camera excluded), matching the core head model's layout.
    pub fn flat(&self) -> Result<Tensor> {
        Ok(Tensor::cat(
            &[&self.beta, &self.psi, &self.theta_j, &self.eye_b, &self.theta_h],
            1,
        )?)
    }

    /// The expression group `[psi | theta_j | eye_b]`, `(batch, n_expr + 5)`.
    pub fn psi_group(&self) -> Result<Tensor> {
        Ok(Tensor::cat(&[&self.psi, &self.theta_j, &self.eye_b], 1)?)
    }

    /// Copy with the expression group replaced (for augmented re-renders).
    /// `psi_group` must be `(batch, n_expr + 5)`.
    pub fn with_psi_group(&self, psi_group: &Tensor) -> Result<Self> {
        let (b, w) = psi_group.dims2()?;
        let n_expr = self.psi.dims()[1];
        if b != self.batch() || w != n_expr + 5 {
            return Err(Error::Validation(format!(
                "psi group must be ({}, {}), got {:?}",
                self.batch(),
                n_expr + 5,
                psi_group.dims()
            )));
        }
        Ok(GeometryEstimate {
            beta: self.beta.clone(),
            psi: psi_group.narrow(1, 0, n_expr)?,
            theta_j: psi_group.narrow(1, n_expr, 3)?,
            eye_b: psi_group.narrow(1, n_expr + 3, 2)?,
            theta_h: self.theta_h.clone(),
            cam: self.cam.clone(),
        })
    }

    /// Cut every field out of the autodiff graph.
    pub fn detach(&self) -> Self {
        GeometryEstimate {
            beta: self.beta.detach(),
            psi: self.psi.detach(),
            theta_j: self.theta_j.detach(),
            eye_b: self.eye_b.detach(),
            theta_h: self.theta_h.detach(),
            cam: self.cam.detach(),
        }
    }

    /// Detach only the frozen groups (β and θ), keeping the expression
    /// group in the graph — the stage-2 configuration.
    pub fn detach_frozen_groups(&self) -> Self {
        GeometryEstimate {
            beta: self.beta.detach(),
            psi: self.psi.clone(),
            theta_j: self.theta_j.clone(),
            eye_b: self.eye_b.clone(),
            theta_h: self.theta_h.detach(),
            cam: self.cam.detach(),
        }
    }

    /// Yaw angles used for pose-mask selection: the y component of the
    /// head's axis-angle rotation, one f64 per sample.
    pub fn yaw_angles(&self) -> Result<Vec<f64>> {
        let theta = self
            .theta_h
            .to_dtype(candle_core::DType::F64)?
            .to_vec2::<f64>()?;
        Ok(theta.iter().map(|row| row[1]).collect())
    }

    /// Extract sample `i` as core [`HeadParams`] (for rendering outside the
    /// graph, dumps and evaluation).
    pub fn to_head_params(&self, i: usize) -> Result<HeadParams> {
        if i >= self.batch() {
            return Err(Error::Validation(format!(
                "sample {i} out of range (batch {})",
                self.batch()
            )));
        }
        let row = |t: &Tensor| -> Result<Vec<f64>> {
            Ok(t.narrow(0, i, 1)?
                .to_dtype(candle_core::DType::F64)?
                .flatten_all()?
                .to_vec1::<f64>()?)
        };
        let theta_j = row(&self.theta_j)?;
        let eye_b = row(&self.eye_b)?;
        let theta_h = row(&self.theta_h)?;
        let cam = row(&self.cam)?;
        Ok(HeadParams {
            beta: Array1::from_vec(row(&self.beta)?),
            psi: Array1::from_vec(row(&self.psi)?),
            theta_j: [theta_j[0], theta_j[1], theta_j[2]],
            eye_b: [eye_b[0], eye_b[1]],
            theta_h: [theta_h[0], theta_h[1], theta_h[2]],
            cam_c: [cam[0], cam[1], cam[2]],
        })
    }
}

/// One encoder: backbone + pooled linear head.
struct Encoder {
    backbone: ConvBackbone,
    head: Linear,
}

impl Encoder {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        stage_channels: &[usize],
        out_dim: usize,
    ) -> Result<Self> {
        let backbone = ConvBackbone::new(store, prefix, 3, stage_channels)?;
        // Zero-initialized head: untrained prediction is the neutral head.
        let head = linear(
            store,
            &format!("{prefix}.head"),
            *stage_channels.last().expect("validated non-empty"),
            out_dim,
            true,
            Some(Init::Zeros),
        )?;
        Ok(Encoder { backbone, head })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.head.forward(&self.backbone.forward_pooled(x)?)?)
    }
}

/// The three geometry encoders. Weights register under `{prefix}.e_beta.*`,
/// `{prefix}.e_psi.*` and `{prefix}.e_theta.*`, which are also the freeze
/// hash prefixes used by the stage-2 contract.
pub struct GeometryEncoders {
    config: GeometryConfig,
    e_beta: Encoder,
    e_psi: Encoder,
    e_theta: Encoder,
}

impl GeometryEncoders {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &GeometryConfig) -> Result<Self> {
        config.validate()?;
        let e_beta = Encoder::new(
            store,
            &format!("{prefix}.e_beta"),
            &config.stage_channels,
            config.n_shape,
        )?;
        let e_psi = Encoder::new(
            store,
            &format!("{prefix}.e_psi"),
            &config.stage_channels,
            config.psi_group_len(),
        )?;
        // theta_h (3) + raw camera (3).
        let e_theta = Encoder::new(
            store,
            &format!("{prefix}.e_theta"),
            &config.stage_channels,
            6,
        )?;
        Ok(GeometryEncoders {
            config: config.clone(),
            e_beta,
            e_psi,
            e_theta,
        })
    }

    pub fn config(&self) -> &GeometryConfig {
        &self.config
    }

    /// Encode a `(batch, 3, r, r)` image batch into head parameters.
    pub fn encode(&self, images: &Tensor) -> Result<GeometryEstimate> {
        let x = prepare_input(
            images,
            self.config.input_resolution,
            self.config.allow_resize,
        )?;
        let beta = self.e_beta.forward(&x)?;
        let psi_group = self.e_psi.forward(&x)?;
        let pose = self.e_theta.forward(&x)?;

        let n_expr = self.config.n_expr;
        let theta_h = pose.narrow(1, 0, 3)?;
        let cam = map_camera(&pose.narrow(1, 3, 3)?)?;
        Ok(GeometryEstimate {
            beta,
            psi: psi_group.narrow(1, 0, n_expr)?,
            theta_j: psi_group.narrow(1, n_expr, 3)?,
            eye_b: psi_group.narrow(1, n_expr + 3, 2)?,
            theta_h,
            cam,
        })
    }

    /// Run only the expression encoder: `(batch, n_expr + 5)` group vector.
    /// Used by the expression-consistency cycle.
    pub fn encode_psi_group(&self, images: &Tensor) -> Result<Tensor> {
        let x = prepare_input(
            images,
            self.config.input_resolution,
            self.config.allow_resize,
        )?;
        self.e_psi.forward(&x)
    }
}

/// Map raw camera head outputs to `(s, t_x, t_y)` with a strictly positive
/// scale: `s = softplus(raw_s + offset) + floor`.
fn map_camera(raw: &Tensor) -> Result<Tensor> {
    let raw_s = raw.narrow(1, 0, 1)?;
    let t = raw.narrow(1, 1, 2)?;
    let s = (softplus(&(raw_s + CAM_SCALE_RAW_OFFSET)?)? + CAM_SCALE_FLOOR)?;
    Ok(Tensor::cat(&[&s, &t], 1)?)
}

/// Numerically stable `log(1 + exp(x)) = max(x, 0) + log(1 + exp(-|x|))`.
fn softplus(x: &Tensor) -> Result<Tensor> {
    let relu = x.relu()?;
    let neg_abs = x.abs()?.neg()?;
    Ok((relu + (neg_abs.exp()? + 1.0)?.log()?)?)
}
