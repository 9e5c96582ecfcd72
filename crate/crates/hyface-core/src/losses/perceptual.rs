//! Image-level supervision: photometric error plus a multi-scale perceptual
//! error over a pluggable feature extractor. The default extractor is a
//! fixed Gaussian pyramid — deterministic, training-free, and cheap; a
//! learned feature back-end can be slotted in through the same trait.

use ndarray::{Array3, Zip};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Multi-level image features for the perceptual loss.
pub trait FeatureExtractor {
    /// Feature maps from coarse supervision levels; same input shape must
    /// always produce the same output shapes.
    fn levels(&self, image: &Array3<f32>) -> Vec<Array3<f32>>;
}

/// Fixed Gaussian pyramid: each level blurs with a 5-tap binomial kernel
/// (edge-clamped) and decimates by two.
#[derive(Debug, Clone)]
pub struct GaussianPyramid {
    pub levels: usize,
}

impl Default for GaussianPyramid {
    fn default() -> Self {
        GaussianPyramid { levels: 3 }
    }
}

/// 5-tap binomial kernel, the classic pyramid generator.
const KERNEL: [f64; 5] = [
    1.0 / 16.0,
    4.0 / 16.0,
    6.0 / 16.0,
    4.0 / 16.0,
    1.0 / 16.0,
];

impl FeatureExtractor for GaussianPyramid {
    fn levels(&self, image: &Array3<f32>) -> Vec<Array3<f32>> {
        let mut out = Vec::with_capacity(self.levels);
        let mut current = image.clone();
        for _ in 0..self.levels {
            current = decimate2(&blur5(&current));
            out.push(current.clone());
        }
        out
    }
}

/// Separable 5-tap blur, horizontal then vertical, clamping at the edges so
/// constant images stay constant.
fn blur5(img: &Array3<f32>) -> Array3<f32> {
    let (h, w, c) = img.dim();
    let mut horiz = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for (k, kv) in KERNEL.iter().enumerate() {
                    let sx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += kv * img[[y, sx, ch]] as f64;
                }
                horiz[[y, x, ch]] = acc as f32;
            }
        }
    }
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for (k, kv) in KERNEL.iter().enumerate() {
                    let sy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += kv * horiz[[sy, x, ch]] as f64;
                }
                out[[y, x, ch]] = acc as f32;
            }
        }
    }
    out
}

/// Keep every second pixel starting at (0, 0); output is `ceil(n / 2)` wide.
fn decimate2(img: &Array3<f32>) -> Array3<f32> {
    let (h, w, c) = img.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Array3::zeros((oh, ow, c));
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                out[[y, x, ch]] = img[[2 * y, 2 * x, ch]];
            }
        }
    }
    out
}

/// Mean absolute pixel error over all pixels and channels.
pub fn photometric_loss(i: &Array3<f32>, i_hat: &Array3<f32>) -> Result<f64> {
    if i.dim() != i_hat.dim() {
        return Err(Error::Validation(format!(
            "photometric_loss images must match, got {:?} and {:?}",
            i.dim(),
            i_hat.dim()
        )));
    }
    let mut sum = 0.0f64;
    Zip::from(i).and(i_hat).for_each(|&a, &b| {
        sum += (a as f64 - b as f64).abs();
    });
    Ok(sum / i.len() as f64)
}

/// Mean absolute feature error, averaged over extractor levels.
pub fn perceptual_loss(
    i: &Array3<f32>,
    i_hat: &Array3<f32>,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    if i.dim() != i_hat.dim() {
        return Err(Error::Validation(format!(
            "perceptual_loss images must match, got {:?} and {:?}",
            i.dim(),
            i_hat.dim()
        )));
    }
    let fa = extractor.levels(i);
    let fb = extractor.levels(i_hat);
    if fa.is_empty() || fa.len() != fb.len() {
        return Err(Error::Validation(format!(
            "feature extractor produced {} / {} levels",
            fa.len(),
            fb.len()
        )));
    }
    let mut total = 0.0f64;
    for (a, b) in fa.iter().zip(fb.iter()) {
        if a.dim() != b.dim() {
            return Err(Error::Validation(
                "feature extractor level shapes disagree between inputs".into(),
            ));
        }
        let mut sum = 0.0f64;
        Zip::from(a).and(b).for_each(|&x, &y| {
            sum += (x as f64 - y as f64).abs();
        });
        total += sum / a.len() as f64;
    }
    Ok(total / fa.len() as f64)
}

/// Combined image-level objective: `λ_pho · L_pho + λ_per · L_per` with the
/// default Gaussian-pyramid features.
pub fn image_loss(i: &Array3<f32>, i_hat: &Array3<f32>, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    let pho = photometric_loss(i, i_hat)?;
    let per = perceptual_loss(i, i_hat, &GaussianPyramid::default())?;
    Ok(weights.lambda_pho * pho + weights.lambda_per * per)
}
