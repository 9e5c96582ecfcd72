//! Inference plumbing shared by the reconstruction-family commands: loading
//! a trained model, pushing single images through encode → render →
//! synthesize, and writing the standard output artefacts.

use std::path::{Path, PathBuf};

use candle_core::Tensor;
use hyface_core::data::{load_manifest, SampleRecord};
use hyface_core::image::{load_png, resize_bilinear, save_png};
use hyface_nn::bridge::{chw_to_image, images_to_batch};
use hyface_nn::checkpoint::{load_model, TrainMeta};
use hyface_nn::geometry::GeometryEstimate;
use hyface_nn::model::ModelBundle;
use hyface_nn::tokenizer::AppearanceToken;
use hyface_nn::trainer::Renderer;
use hyface_nn::{Error, Result};
use ndarray::Array3;

/// A checkpointed model plus the fixed-function renderer it trains against.
pub struct InferenceModel {
    pub bundle: ModelBundle,
    pub renderer: Renderer,
    pub meta: TrainMeta,
}

/// Render/synthesis products for one batch.
pub struct Synthesis {
    /// Blendshape vertex positions `(b, v, 3)`.
    pub positions: Tensor,
    /// Rastered mesh frame `(b, 3, h, w)`.
    pub i_v: Tensor,
    /// Coverage mask `(b, 1, h, w)`.
    pub mask: Tensor,
    /// Synthesized output frame `(b, 3, h, w)`.
    pub i_hat: Tensor,
}

impl InferenceModel {
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let (bundle, _store, meta) = load_model(checkpoint)?;
        let renderer = Renderer::new(&bundle)?;
        Ok(InferenceModel {
            bundle,
            renderer,
            meta,
        })
    }

    /// Side length the model's encoders expect.
    pub fn resolution(&self) -> usize {
        self.bundle.config.geometry.input_resolution
    }

    /// Load a PNG and resize it to the model resolution if needed.
    pub fn load_image(&self, path: &Path) -> Result<Array3<f32>> {
        let img = load_png(path)?;
        let res = self.resolution();
        if img.dim().0 == res && img.dim().1 == res {
            Ok(img)
        } else {
            Ok(resize_bilinear(&img, res, res))
        }
    }

    /// Encode one image: geometry estimate, appearance token, and the
    /// `(1, 3, h, w)` input batch for later background compositing.
    pub fn encode(&self, image: &Array3<f32>) -> Result<(GeometryEstimate, AppearanceToken, Tensor)> {
        let images = images_to_batch(&[image])?;
        let estimate = self.bundle.encoders.encode(&images)?;
        let token = self.bundle.tokenizer.tokenize(&images)?;
        Ok((estimate, token, images))
    }

    /// Full decode path: raster the estimate, composite the background from
    /// `images`, and synthesize with `token`.
    pub fn synthesize(
        &self,
        estimate: &GeometryEstimate,
        token: &AppearanceToken,
        images: &Tensor,
    ) -> Result<Synthesis> {
        let positions = self.renderer.positions(estimate)?;
        let (i_v, mask) = self.renderer.render(&positions, &estimate.cam)?;
        let i_b = self.renderer.background(images, &mask)?;
        let i_hat = self.bundle.synthesizer.synthesize(&i_v, &i_b, token)?;
        Ok(Synthesis {
            positions,
            i_v,
            mask,
            i_hat,
        })
    }
}

/// Blend the mesh raster onto the input at half opacity: `I·(1−M/2) + I_v·M/2`.
pub fn mesh_overlay(images: &Tensor, i_v: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let half = mask.affine(0.5, 0.0)?;
    let kept = images.broadcast_mul(&half.affine(-1.0, 1.0)?)?;
    Ok(kept.add(&i_v.broadcast_mul(&half)?)?)
}

/// Save sample 0 of a `(b, 3, h, w)` batch as a PNG.
pub fn save_frame_png(path: impl AsRef<Path>, frames: &Tensor) -> Result<()> {
    let img = chw_to_image(&frames.get(0)?)?;
    Ok(save_png(path, &img)?)
}

/// Dump sample 0 of an estimate as pretty JSON with one key per parameter
/// group, in the head model's flat-layout order.
pub fn write_params_json(path: impl AsRef<Path>, estimate: &GeometryEstimate) -> Result<()> {
    let p = estimate.to_head_params(0)?;
    let doc = serde_json::json!({
        "beta": p.beta.to_vec(),
        "psi": p.psi.to_vec(),
        "theta_j": p.theta_j,
        "eye_b": p.eye_b,
        "theta_h": p.theta_h,
        "cam_c": p.cam_c,
    });
    let text = format!("{}\n", serde_json::to_string_pretty(&doc).expect("json"));
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| hyface_core::Error::io(path, e))?;
    Ok(())
}

/// Dump sample 0 of a token as text: `K·d` lines, one value per line,
/// scales from coarse to fine.
pub fn write_token_txt(path: impl AsRef<Path>, token: &AppearanceToken) -> Result<()> {
    let mut text = String::new();
    for sub in token.sub_tokens() {
        let row = sub.get(0)?.to_vec1::<f32>()?;
        for v in row {
            text.push_str(&format!("{v:e}\n"));
        }
    }
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| hyface_core::Error::io(path, e))?;
    Ok(())
}

/// Resolve a dataset argument — either a directory holding `manifest.csv`
/// or a path to the manifest itself — into records plus the dataset root.
pub fn resolve_dataset(data: &Path) -> Result<(Vec<SampleRecord>, PathBuf)> {
    let manifest = if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    };
    let root = manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let records = load_manifest(&manifest)?;
    if records.is_empty() {
        return Err(Error::Validation(format!(
            "{}: dataset is empty",
            manifest.display()
        )));
    }
    Ok((records, root))
}
