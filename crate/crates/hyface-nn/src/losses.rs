//! Differentiable twins of the array-side loss functions, plus the
//! cycle-consistency terms that need live networks.
//!
//! Every function here returns a scalar tensor that participates in
//! autodiff; the array implementations in the core crate stay the
//! ground truth, and the parity tests below pin the two sides together.
//! Batched inputs reduce by per-sample value, then mean over the batch,
//! so a batch of one reproduces the core scalar exactly.

use candle_core::{DType, Device, Tensor};
use ndarray::Array3;

use hyface_core::losses::{pose_mask_select, LossWeights, PoseMasks, RegionMasks};
use hyface_core::head::N_LANDMARKS;

use crate::error::{Error, Result};
use crate::tokenizer::AppearanceToken;

/// Guard added under square roots so an exact zero keeps a finite gradient.
const NORM_EPS: f64 = 1e-24;

/// 5-tap binomial kernel shared with the array-side pyramid.
const KERNEL: [f64; 5] = [
    1.0 / 16.0,
    4.0 / 16.0,
    6.0 / 16.0,
    4.0 / 16.0,
    1.0 / 16.0,
];

/// Pyramid depth used by [`image_loss`], matching the array-side default.
pub const IMAGE_LOSS_PYRAMID_LEVELS: usize = 3;

fn check_pair(name: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Validation(format!(
            "{name} inputs must share a shape, got {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Per-sample L2 norm of a `(batch, d)` tensor, eps-guarded at zero.
fn batch_l2_norm(x: &Tensor) -> Result<Tensor> {
    Ok((x.sqr()?.sum(1)? + NORM_EPS)?.sqrt()?)
}

/// Unmasked landmark loss on `(batch, n, 2)` point sets: per sample the mean
/// over landmarks of the L1 distance, then the batch mean.
pub fn landmark_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_pair("landmark_loss", a, b)?;
    let (_b, n, two) = a.dims3()?;
    if two != 2 || n == 0 {
        return Err(Error::Validation(format!(
            "landmark sets must be non-empty (batch, n, 2), got {:?}",
            a.dims()
        )));
    }
    Ok((a - b)?.abs()?.sum(2)?.mean(1)?.mean(0)?)
}

/// Pose-dependent landmark loss on `(batch, 203, 2)` point sets: per sample
/// the L2 norm of the coordinate differences over the yaw-selected mask,
/// then the batch mean. The masks enter as constants, so no gradient flows
/// through the yaw selection.
pub fn pdl_loss(
    detected: &Tensor,
    projected: &Tensor,
    yaws: &[f64],
    masks: &PoseMasks,
) -> Result<Tensor> {
    check_pair("pdl_loss", detected, projected)?;
    let (b, n, two) = detected.dims3()?;
    if n != N_LANDMARKS || two != 2 {
        return Err(Error::Validation(format!(
            "pdl_loss landmarks must be (batch, {N_LANDMARKS}, 2), got {:?}",
            detected.dims()
        )));
    }
    if yaws.len() != b {
        return Err(Error::Validation(format!(
            "pdl_loss got {} yaw angles for a batch of {b}",
            yaws.len()
        )));
    }
    let mut weights = Vec::with_capacity(b * n);
    for &yaw in yaws {
        let mask = pose_mask_select(yaw, masks);
        weights.extend(mask.iter().map(|&keep| if keep { 1.0f32 } else { 0.0 }));
    }
    let weights = Tensor::from_vec(weights, (b, n, 1), detected.device())?
        .to_dtype(detected.dtype())?;
    let sq = (detected - projected)?
        .sqr()?
        .broadcast_mul(&weights)?
        .sum(2)?
        .sum(1)?;
    Ok((sq + NORM_EPS)?.sqrt()?.mean(0)?)
}

/// Mean absolute pixel error over `(batch, c, h, w)` images.
pub fn photometric_loss(i: &Tensor, i_hat: &Tensor) -> Result<Tensor> {
    check_pair("photometric_loss", i, i_hat)?;
    i.dims4()?;
    Ok((i - i_hat)?.abs()?.mean_all()?)
}

/// Separable 5-tap binomial blur with edge-clamped padding.
fn blur5(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let kernel = |dims: (usize, usize, usize, usize)| -> Result<Tensor> {
        Ok(Tensor::from_slice(&KERNEL, dims, x.device())?.to_dtype(x.dtype())?)
    };
    // Horizontal pass: channels fold into the batch so a single-channel
    // kernel blurs everything at once.
    let horiz = x
        .pad_with_same(3, 2, 2)?
        .reshape((b * c, 1, h, w + 4))?
        .conv2d(&kernel((1, 1, 1, 5))?, 0, 1, 1, 1)?
        .reshape((b, c, h, w))?;
    Ok(horiz
        .pad_with_same(2, 2, 2)?
        .reshape((b * c, 1, h + 4, w))?
        .conv2d(&kernel((1, 1, 5, 1))?, 0, 1, 1, 1)?
        .reshape((b, c, h, w))?)
}

/// Keep every second row/column starting at (0, 0).
fn decimate2(x: &Tensor) -> Result<Tensor> {
    let (_b, _c, h, w) = x.dims4()?;
    let evens = |n: usize| -> Result<Tensor> {
        let ids: Vec<u32> = (0..n as u32).step_by(2).collect();
        let len = ids.len();
        Ok(Tensor::from_vec(ids, len, x.device())?)
    };
    Ok(x.index_select(&evens(h)?, 2)?.index_select(&evens(w)?, 3)?)
}

/// Gaussian-pyramid feature levels of a `(batch, c, h, w)` image: each level
/// blurs with the binomial kernel and decimates by two.
pub fn pyramid_levels(image: &Tensor, levels: usize) -> Result<Vec<Tensor>> {
    if levels == 0 {
        return Err(Error::Validation("pyramid needs at least one level".into()));
    }
    let mut out = Vec::with_capacity(levels);
    let mut current = image.clone();
    for _ in 0..levels {
        current = decimate2(&blur5(&current)?)?;
        out.push(current.clone());
    }
    Ok(out)
}

/// Mean absolute pyramid-feature error, averaged over levels.
pub fn perceptual_loss(i: &Tensor, i_hat: &Tensor, levels: usize) -> Result<Tensor> {
    check_pair("perceptual_loss", i, i_hat)?;
    let fa = pyramid_levels(i, levels)?;
    let fb = pyramid_levels(i_hat, levels)?;
    let mut total: Option<Tensor> = None;
    for (a, b) in fa.iter().zip(fb.iter()) {
        let term = (a - b)?.abs()?.mean_all()?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok((total.expect("levels >= 1") / levels as f64)?)
}

/// Combined image-level objective `λ_pho · L_pho + λ_per · L_per`.
pub fn image_loss(i: &Tensor, i_hat: &Tensor, weights: &LossWeights) -> Result<Tensor> {
    weights.validate()?;
    let pho = photometric_loss(i, i_hat)?;
    let per = perceptual_loss(i, i_hat, IMAGE_LOSS_PYRAMID_LEVELS)?;
    Ok(((pho * weights.lambda_pho)? + (per * weights.lambda_per)?)?)
}

/// Stack per-sample region masks into a `(batch, 1, h, w)` weight tensor
/// (mouth plus eyes, exactly as the array-side loss weighs them).
pub fn region_weights(masks: &[RegionMasks], dtype: DType) -> Result<Tensor> {
    if masks.is_empty() {
        return Err(Error::Validation("region weights need a batch".into()));
    }
    let (h, w) = masks[0].mouth.dim();
    let mut flat = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if m.mouth.dim() != (h, w) || m.eyes.dim() != (h, w) {
            return Err(Error::Validation(
                "region masks in a batch must share a shape".into(),
            ));
        }
        flat.extend(m.mouth.iter().zip(m.eyes.iter()).map(|(a, b)| a + b));
    }
    let t = Tensor::from_vec(flat, (masks.len(), 1, h, w), &Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}

/// Region loss: per sample the L2 norm of the weighted pixel differences,
/// then the batch mean. `weights` is `(batch, 1, h, w)` (see
/// [`region_weights`]) and receives no gradient.
pub fn region_loss(i: &Tensor, i_hat: &Tensor, weights: &Tensor) -> Result<Tensor> {
    check_pair("region_loss", i, i_hat)?;
    let (b, _c, h, w) = i.dims4()?;
    if weights.dims() != [b, 1, h, w] {
        return Err(Error::Validation(format!(
            "region weights must be ({b}, 1, {h}, {w}), got {:?}",
            weights.dims()
        )));
    }
    let sq = (i - i_hat)?
        .broadcast_mul(weights)?
        .sqr()?
        .sum(3)?
        .sum(2)?
        .sum(1)?;
    Ok((sq + NORM_EPS)?.sqrt()?.mean(0)?)
}

/// Anything that maps an image batch to an appearance token; implemented by
/// the tokenizer and by test doubles.
pub trait TokenEncoder {
    fn encode_token(&self, images: &Tensor) -> Result<AppearanceToken>;
}

impl TokenEncoder for crate::tokenizer::Mfat {
    fn encode_token(&self, images: &Tensor) -> Result<AppearanceToken> {
        self.tokenize(images)
    }
}

/// Anything that maps an image batch to the expression parameter group
/// `[psi | theta_j | eye_b]`.
pub trait ExpressionEncoder {
    fn encode_expression(&self, images: &Tensor) -> Result<Tensor>;
}

impl ExpressionEncoder for crate::geometry::GeometryEncoders {
    fn encode_expression(&self, images: &Tensor) -> Result<Tensor> {
        self.encode_psi_group(images)
    }
}

/// Token consistency: re-tokenize every synthesized view and sum, over the
/// views, the batch-mean L2 distance between the re-extracted token and the
/// original one (concatenated across scales). At least one view is
/// required; the augmentation count is a modelling decision, not a default
/// this function supplies.
pub fn token_consistency_loss(
    encoder: &dyn TokenEncoder,
    synthesized: &[Tensor],
    token: &AppearanceToken,
) -> Result<Tensor> {
    if synthesized.is_empty() {
        return Err(Error::Validation(
            "token consistency needs at least one synthesized view".into(),
        ));
    }
    let target = token.concat()?;
    let mut total: Option<Tensor> = None;
    for view in synthesized {
        let rehashed = encoder.encode_token(view)?.concat()?;
        let term = batch_l2_norm(&(rehashed - &target)?)?.mean(0)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one view"))
}

/// Expression consistency: re-encode every synthesized view and sum, over
/// the views, the batch-mean L2 distance to the expression group that
/// produced it. `targets[k]` is the `(batch, n_expr + 5)` group behind
/// `synthesized[k]`.
pub fn expression_consistency_loss(
    encoder: &dyn ExpressionEncoder,
    synthesized: &[Tensor],
    targets: &[Tensor],
) -> Result<Tensor> {
    if synthesized.is_empty() {
        return Err(Error::Validation(
            "expression consistency needs at least one synthesized view".into(),
        ));
    }
    if synthesized.len() != targets.len() {
        return Err(Error::Validation(format!(
            "expression consistency got {} views but {} targets",
            synthesized.len(),
            targets.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (view, target) in synthesized.iter().zip(targets.iter()) {
        let recovered = encoder.encode_expression(view)?;
        check_pair("expression_consistency_loss", &recovered, target)?;
        let term = batch_l2_norm(&(recovered - target)?)?.mean(0)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one view"))
}

/// Read a scalar loss tensor back as f64 (for logging and reports).
pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?
        .first()
        .copied()
        .ok_or_else(|| Error::Validation("empty loss tensor".into()))?)
}

/// `(h, w, 3)` image → `(1, 3, h, w)` tensor of the requested dtype.
pub fn image_to_batch1(img: &Array3<f32>, dtype: DType) -> Result<Tensor> {
    Ok(crate::bridge::image_to_chw(img)?
        .unsqueeze(0)?
        .to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Var;
    use hyface_core::losses as core_losses;
    use hyface_core::losses::perceptual::FeatureExtractor;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::cell::Cell;

    fn random_image(seed: u64, h: usize, w: usize) -> Array3<f32> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut img = Array3::zeros((h, w, 3));
        for v in img.iter_mut() {
            *v = rng.random::<f32>();
        }
        img
    }

    fn random_landmarks(seed: u64, n: usize) -> Array2<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut lms = Array2::zeros((n, 2));
        for v in lms.iter_mut() {
            *v = rng.random::<f64>();
        }
        lms
    }

    fn landmarks_tensor(sets: &[&Array2<f64>]) -> Tensor {
        let stacked: Vec<Tensor> = sets
            .iter()
            .map(|s| crate::bridge::array2_to_tensor(s, DType::F64).unwrap())
            .collect();
        Tensor::stack(&stacked, 0).unwrap()
    }

    #[test]
    fn landmark_loss_matches_array_side() {
        let a1 = random_landmarks(1, N_LANDMARKS);
        let b1 = random_landmarks(2, N_LANDMARKS);
        let a2 = random_landmarks(3, N_LANDMARKS);
        let b2 = random_landmarks(4, N_LANDMARKS);
        let want = 0.5
            * (core_losses::landmark_loss(&a1, &b1).unwrap()
                + core_losses::landmark_loss(&a2, &b2).unwrap());
        let got = scalar_f64(
            &landmark_loss(&landmarks_tensor(&[&a1, &a2]), &landmarks_tensor(&[&b1, &b2]))
                .unwrap(),
        )
        .unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn pdl_loss_matches_array_side_across_yaw_bands() {
        let masks = PoseMasks::builtin();
        let yaws = [0.0, -0.3, 0.3];
        let det: Vec<Array2<f64>> = (0..3).map(|i| random_landmarks(10 + i, N_LANDMARKS)).collect();
        let proj: Vec<Array2<f64>> =
            (0..3).map(|i| random_landmarks(20 + i, N_LANDMARKS)).collect();
        let want: f64 = yaws
            .iter()
            .zip(det.iter().zip(proj.iter()))
            .map(|(&y, (d, p))| core_losses::pdl_loss(d, p, y, &masks).unwrap())
            .sum::<f64>()
            / 3.0;
        let d_t = landmarks_tensor(&det.iter().collect::<Vec<_>>());
        let p_t = landmarks_tensor(&proj.iter().collect::<Vec<_>>());
        let got = scalar_f64(&pdl_loss(&d_t, &p_t, &yaws, &masks).unwrap()).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn pdl_loss_ignores_masked_out_landmarks() {
        let masks = PoseMasks::builtin();
        let yaw = -0.2;
        let mask = pose_mask_select(yaw, &masks);
        let base = Array2::zeros((N_LANDMARKS, 2));
        let mut off = base.clone();
        for i in 0..N_LANDMARKS {
            if !mask[i] {
                off[[i, 0]] = 5.0;
            }
        }
        let loss = scalar_f64(
            &pdl_loss(
                &landmarks_tensor(&[&base]),
                &landmarks_tensor(&[&off]),
                &[yaw],
                &masks,
            )
            .unwrap(),
        )
        .unwrap();
        assert!(loss < 1e-9, "masked-out offsets must not count, got {loss}");
    }

    #[test]
    fn photometric_loss_matches_array_side() {
        let i = random_image(5, 16, 16);
        let j = random_image(6, 16, 16);
        let want = core_losses::photometric_loss(&i, &j).unwrap();
        let got = scalar_f64(
            &photometric_loss(
                &image_to_batch1(&i, DType::F64).unwrap(),
                &image_to_batch1(&j, DType::F64).unwrap(),
            )
            .unwrap(),
        )
        .unwrap();
        assert!((got - want).abs() < 1e-7, "{got} vs {want}");
    }

    #[test]
    fn pyramid_levels_match_array_side() {
        let img = random_image(7, 16, 12);
        let core_levels =
            core_losses::GaussianPyramid { levels: 3 }.levels(&img);
        let t = image_to_batch1(&img, DType::F64).unwrap();
        let tensor_levels = pyramid_levels(&t, 3).unwrap();
        assert_eq!(tensor_levels.len(), 3);
        for (lvl, (core_l, tens_l)) in core_levels.iter().zip(tensor_levels.iter()).enumerate() {
            let back = crate::bridge::chw_to_image(
                &tens_l.squeeze(0).unwrap().to_dtype(DType::F32).unwrap(),
            )
            .unwrap();
            assert_eq!(core_l.dim(), back.dim(), "level {lvl} shape");
            for (a, b) in core_l.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-5, "level {lvl}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn perceptual_and_image_loss_match_array_side() {
        let i = random_image(8, 16, 16);
        let j = random_image(9, 16, 16);
        let ti = image_to_batch1(&i, DType::F64).unwrap();
        let tj = image_to_batch1(&j, DType::F64).unwrap();
        let per_want =
            core_losses::perceptual_loss(&i, &j, &core_losses::GaussianPyramid::default())
                .unwrap();
        let per_got = scalar_f64(&perceptual_loss(&ti, &tj, 3).unwrap()).unwrap();
        assert!((per_got - per_want).abs() < 1e-6, "{per_got} vs {per_want}");

        let w = LossWeights::default();
        let img_want = core_losses::image_loss(&i, &j, &w).unwrap();
        let img_got = scalar_f64(&image_loss(&ti, &tj, &w).unwrap()).unwrap();
        assert!((img_got - img_want).abs() < 1e-6, "{img_got} vs {img_want}");
    }

    #[test]
    fn region_loss_matches_array_side() {
        let mut mouth = Array2::zeros((16, 16));
        let mut eyes = Array2::zeros((16, 16));
        for x in 3..8 {
            mouth[[10, x]] = 1.0;
        }
        eyes[[4, 4]] = 1.0;
        eyes[[4, 10]] = 1.0;
        let masks = RegionMasks { mouth, eyes };
        let i = random_image(11, 16, 16);
        let j = random_image(12, 16, 16);
        let want = core_losses::region_loss(&i, &j, &masks).unwrap();
        let weights = region_weights(std::slice::from_ref(&masks), DType::F64).unwrap();
        let got = scalar_f64(
            &region_loss(
                &image_to_batch1(&i, DType::F64).unwrap(),
                &image_to_batch1(&j, DType::F64).unwrap(),
                &weights,
            )
            .unwrap(),
        )
        .unwrap();
        assert!((got - want).abs() < 1e-7, "{got} vs {want}");
    }

    #[test]
    fn image_loss_is_differentiable() {
        let target = image_to_batch1(&random_image(13, 16, 16), DType::F32).unwrap();
        let pred = Var::from_tensor(
            &image_to_batch1(&random_image(14, 16, 16), DType::F32).unwrap(),
        )
        .unwrap();
        let loss = image_loss(&pred.as_tensor().clone(), &target, &LossWeights::default())
            .unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(pred.as_tensor()).expect("gradient on prediction");
        let nonzero = g
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()
            .iter()
            .filter(|&&x| x != 0.0)
            .count();
        assert!(nonzero > 0);
    }

    /// Test double: returns preset tokens in call order, ignoring pixels.
    struct ScriptedTokenizer {
        outputs: Vec<AppearanceToken>,
        next: Cell<usize>,
    }

    impl TokenEncoder for ScriptedTokenizer {
        fn encode_token(&self, _images: &Tensor) -> Result<AppearanceToken> {
            let i = self.next.get();
            self.next.set(i + 1);
            Ok(self.outputs[i].clone())
        }
    }

    fn token_from(rows: &[Vec<f32>]) -> AppearanceToken {
        let subs = rows
            .iter()
            .map(|r| Tensor::from_vec(r.clone(), (1, r.len()), &Device::Cpu).unwrap())
            .collect();
        AppearanceToken::new(subs).unwrap()
    }

    #[test]
    fn token_consistency_of_identical_tokens_is_zero() {
        let t = token_from(&[vec![0.1, 0.2], vec![0.3, 0.4]]);
        let stub = ScriptedTokenizer {
            outputs: vec![t.clone(), t.clone()],
            next: Cell::new(0),
        };
        let views = vec![
            Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap(),
            Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap(),
        ];
        let loss = scalar_f64(&token_consistency_loss(&stub, &views, &t).unwrap()).unwrap();
        assert!(loss < 1e-9, "identical tokens must cost ~0, got {loss}");
    }

    #[test]
    fn token_consistency_sums_per_view_distances() {
        // Views whose re-extracted tokens sit at L2 distances 0.3 and 0.4
        // from the original: the loss is their plain sum.
        let t = token_from(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let off1 = token_from(&[vec![0.3, 0.0], vec![0.0, 0.0]]);
        let off2 = token_from(&[vec![0.0, 0.0], vec![0.0, 0.4]]);
        let stub = ScriptedTokenizer {
            outputs: vec![off1, off2],
            next: Cell::new(0),
        };
        let views = vec![
            Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap(),
            Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap(),
        ];
        let loss = scalar_f64(&token_consistency_loss(&stub, &views, &t).unwrap()).unwrap();
        assert!((loss - 0.7).abs() < 1e-6, "expected 0.3 + 0.4, got {loss}");
    }

    #[test]
    fn cycle_losses_reject_zero_views() {
        let t = token_from(&[vec![0.0, 0.0]]);
        let stub = ScriptedTokenizer {
            outputs: vec![],
            next: Cell::new(0),
        };
        assert!(matches!(
            token_consistency_loss(&stub, &[], &t),
            Err(Error::Validation(_))
        ));
        struct Fixed(Tensor);
        impl ExpressionEncoder for Fixed {
            fn encode_expression(&self, _images: &Tensor) -> Result<Tensor> {
                Ok(self.0.clone())
            }
        }
        let fixed = Fixed(Tensor::zeros((1, 4), DType::F32, &Device::Cpu).unwrap());
        assert!(matches!(
            expression_consistency_loss(&fixed, &[], &[]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn expression_consistency_sums_recovery_errors() {
        struct Scripted {
            outputs: Vec<Tensor>,
            next: Cell<usize>,
        }
        impl ExpressionEncoder for Scripted {
            fn encode_expression(&self, _images: &Tensor) -> Result<Tensor> {
                let i = self.next.get();
                self.next.set(i + 1);
                Ok(self.outputs[i].clone())
            }
        }
        let recovered1 = Tensor::from_vec(vec![1.0f32, 0.0], (1, 2), &Device::Cpu).unwrap();
        let recovered2 = Tensor::from_vec(vec![0.0f32, 2.0], (1, 2), &Device::Cpu).unwrap();
        let stub = Scripted {
            outputs: vec![recovered1, recovered2],
            next: Cell::new(0),
        };
        let zero = Tensor::zeros((1, 2), DType::F32, &Device::Cpu).unwrap();
        let views = vec![
            Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap(),
            Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap(),
        ];
        // Targets are both zero; recovered values sit at distances 1 and 2.
        let loss = scalar_f64(
            &expression_consistency_loss(&stub, &views, &[zero.clone(), zero]).unwrap(),
        )
        .unwrap();
        assert!((loss - 3.0).abs() < 1e-6, "expected 1 + 2, got {loss}");

        // Mismatched view/target counts are a loud error.
        let stub2 = Scripted {
            outputs: vec![],
            next: Cell::new(0),
        };
        let one_view = vec![Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap()];
        assert!(expression_consistency_loss(&stub2, &one_view, &[]).is_err());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = Tensor::zeros((1, 10, 2), DType::F32, &Device::Cpu).unwrap();
        let b = Tensor::zeros((1, 9, 2), DType::F32, &Device::Cpu).unwrap();
        assert!(landmark_loss(&a, &b).is_err());
        let i = Tensor::zeros((1, 3, 8, 8), DType::F32, &Device::Cpu).unwrap();
        let j = Tensor::zeros((1, 3, 8, 9), DType::F32, &Device::Cpu).unwrap();
        assert!(photometric_loss(&i, &j).is_err());
        assert!(perceptual_loss(&i, &j, 3).is_err());
        let masks = PoseMasks::builtin();
        assert!(pdl_loss(&a, &a, &[0.0], &masks).is_err()); // wrong landmark count
        let det = Tensor::zeros((2, N_LANDMARKS, 2), DType::F32, &Device::Cpu).unwrap();
        assert!(pdl_loss(&det, &det, &[0.0], &masks).is_err()); // wrong yaw count
    }
}
