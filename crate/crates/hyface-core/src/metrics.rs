//! Evaluation metrics: image fidelity (PSNR), parameter distances (AED/APD),
//! temporal stability (flicker, warp error), plus the clustering and
//! embedding plumbing used by the token-analysis tooling. Everything is a
//! deterministic pure function with a fixed summation order.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::check_same_shape;

/// PSNR ceiling: zero (or vanishing) MSE reports this instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in dB for `[0, 1]` images (peak = 1).
pub fn psnr(i: &Array3<f32>, i_hat: &Array3<f32>) -> Result<f64> {
    check_same_shape(i, i_hat, "psnr")?;
    let mut sq = 0.0f64;
    for (a, b) in i.iter().zip(i_hat.iter()) {
        let d = *a as f64 - *b as f64;
        sq += d * d;
    }
    let mse = sq / i.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Distance convention for parameter-space metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParamDistance {
    /// Mean absolute difference per coefficient (the reported convention).
    #[default]
    MeanAbs,
    /// Euclidean norm of the difference (ablation variant).
    L2,
}

fn param_distance(a: &Array1<f64>, b: &Array1<f64>, kind: ParamDistance) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Validation(format!(
            "parameter vectors must share a non-zero length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(match kind {
        ParamDistance::MeanAbs => {
            a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
        }
        ParamDistance::L2 => a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
    })
}

fn mean_param_distance(
    a: &[Array1<f64>],
    b: &[Array1<f64>],
    kind: ParamDistance,
) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Validation(format!(
            "datasets must share a non-zero item count, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        sum += param_distance(x, y, kind)?;
    }
    Ok(sum / a.len() as f64)
}

/// Average expression distance over a dataset of coefficient vectors.
pub fn aed(a: &[Array1<f64>], b: &[Array1<f64>]) -> Result<f64> {
    mean_param_distance(a, b, ParamDistance::MeanAbs)
}

/// Average pose distance over a dataset of pose+camera vectors.
pub fn apd(a: &[Array1<f64>], b: &[Array1<f64>]) -> Result<f64> {
    mean_param_distance(a, b, ParamDistance::MeanAbs)
}

/// An ordered stack of frames with fps metadata.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<Array3<f32>>,
    pub fps: f64,
}

impl VideoClip {
    pub fn new(frames: Vec<Array3<f32>>, fps: f64) -> Result<VideoClip> {
        if frames.is_empty() {
            return Err(Error::Validation("clip has no frames".into()));
        }
        let dim = frames[0].dim();
        if frames.iter().any(|f| f.dim() != dim) {
            return Err(Error::Validation("clip frames must share one shape".into()));
        }
        if !(fps > 0.0) {
            return Err(Error::Validation(format!("fps must be positive, got {fps}")));
        }
        Ok(VideoClip { frames, fps })
    }

    fn require_temporal(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Validation(
                "temporal metrics need at least two frames".into(),
            ));
        }
        Ok(())
    }
}

/// Mean frame brightness; "brightness" is the unweighted RGB mean.
fn frame_brightness(frame: &Array3<f32>) -> f64 {
    frame.iter().map(|&v| v as f64).sum::<f64>() / frame.len() as f64
}

/// Flicker: mean absolute brightness change between adjacent frames.
pub fn flicker(clip: &VideoClip) -> Result<f64> {
    clip.require_temporal()?;
    let mut sum = 0.0;
    for t in 0..clip.frames.len() - 1 {
        sum += (frame_brightness(&clip.frames[t + 1]) - frame_brightness(&clip.frames[t])).abs();
    }
    Ok(sum / (clip.frames.len() - 1) as f64)
}

/// Dense optical flow between consecutive frames of a clip.
///
/// `flow(clip, t)` returns an `(h, w, 2)` field mapping pixel `(x, y)` of
/// frame `t + 1` back to `(x - dx, y - dy)` in frame `t`. Real estimators
/// plug in here; tests use analytically known flows.
pub trait FlowProvider {
    fn flow(&self, clip: &VideoClip, t: usize) -> Result<Array3<f32>>;
}

/// Constant translation flow `(dx, dy)` for every pixel and frame pair.
#[derive(Debug, Clone, Copy)]
pub struct ConstantFlow {
    pub dx: f32,
    pub dy: f32,
}

/// Zero flow: warping degenerates to the identity.
pub fn zero_flow() -> ConstantFlow {
    ConstantFlow { dx: 0.0, dy: 0.0 }
}

impl FlowProvider for ConstantFlow {
    fn flow(&self, clip: &VideoClip, t: usize) -> Result<Array3<f32>> {
        if t + 1 >= clip.frames.len() {
            return Err(Error::Validation(format!(
                "no flow for frame pair ({t}, {}): clip has {} frames",
                t + 1,
                clip.frames.len()
            )));
        }
        let (h, w, _) = clip.frames[0].dim();
        let mut f = Array3::zeros((h, w, 2));
        for y in 0..h {
            for x in 0..w {
                f[[y, x, 0]] = self.dx;
                f[[y, x, 1]] = self.dy;
            }
        }
        Ok(f)
    }
}

/// Bilinear sample with an in-bounds validity flag. Samples outside
/// `[0, w-1] x [0, h-1]` are invalid (the flow exits the frame).
fn sample_bilinear(frame: &Array3<f32>, x: f64, y: f64) -> Option<[f64; 3]> {
    let (h, w, _) = frame.dim();
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = frame[[y0, x0, c]] as f64 * (1.0 - fx) + frame[[y0, x1, c]] as f64 * fx;
        let bot = frame[[y1, x0, c]] as f64 * (1.0 - fx) + frame[[y1, x1, c]] as f64 * fx;
        *o = top * (1.0 - fy) + bot * fy;
    }
    Some(out)
}

/// Warp error: for each adjacent pair, warp output frame `t` forward with
/// the flow of the *input* clip and take the mean absolute error against
/// output frame `t + 1`, over pixels whose flow stays inside the frame.
pub fn warp_error(
    clip_in: &VideoClip,
    clip_out: &VideoClip,
    flow_provider: &dyn FlowProvider,
) -> Result<f64> {
    clip_in.require_temporal()?;
    clip_out.require_temporal()?;
    if clip_in.frames.len() != clip_out.frames.len() {
        return Err(Error::Validation(format!(
            "input and output clips differ in length: {} vs {}",
            clip_in.frames.len(),
            clip_out.frames.len()
        )));
    }
    let (h, w, _) = clip_out.frames[0].dim();
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..clip_out.frames.len() - 1 {
        let flow = flow_provider.flow(clip_in, t)?;
        if flow.dim() != (h, w, 2) {
            return Err(Error::Validation(format!(
                "flow field {:?} does not match frames ({h}, {w}, 2)",
                flow.dim()
            )));
        }
        let prev = &clip_out.frames[t];
        let next = &clip_out.frames[t + 1];
        for y in 0..h {
            for x in 0..w {
                let sx = x as f64 - flow[[y, x, 0]] as f64;
                let sy = y as f64 - flow[[y, x, 1]] as f64;
                if let Some(warped) = sample_bilinear(prev, sx, sy) {
                    for (c, wv) in warped.iter().enumerate() {
                        sum += (next[[y, x, c]] as f64 - wv).abs();
                    }
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Validation(
            "warp_error: flow left no valid pixels".into(),
        ));
    }
    Ok(sum / (3 * count) as f64)
}

/// Image-to-vector embedding for similarity metrics. Pretrained perceptual
/// or identity networks plug in here; no weights ship with the crate.
pub trait EmbeddingProvider {
    fn embed(&self, image: &Array3<f32>) -> Vec<f64>;
}

/// Deterministic random-projection stub: validates metric plumbing without
/// a pretrained network. Projects a fixed 16x16 resize of the input through
/// a seeded Gaussian matrix.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    pub seed: u64,
    pub dim: usize,
}

impl EmbeddingProvider for RandomProjection {
    fn embed(&self, image: &Array3<f32>) -> Vec<f64> {
        use rand::SeedableRng;
        let small = crate::image::resize_bilinear(image, 16, 16);
        let flat: Vec<f64> = small.iter().map(|&v| v as f64).collect();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(self.seed);
        let mut out = vec![0.0; self.dim];
        for o in out.iter_mut() {
            for &v in &flat {
                *o += v * crate::head::rig::gaussian(&mut rng);
            }
        }
        out
    }
}

/// Cosine similarity between two embeddings, in `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Validation(format!(
            "embeddings must share a non-zero length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Validation("zero-norm embedding".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Project rows of `data` (n, d) onto the top `k` principal directions.
///
/// Deterministic: covariance eigenvectors via fixed-iteration power method
/// with deflation, sign fixed so each direction's largest-magnitude entry
/// is positive. Returns `(projected (n, k), component variances (k))`.
pub fn pca_project(data: &Array2<f64>, k: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    let (n, d) = data.dim();
    if n < 2 || k == 0 || k > d {
        return Err(Error::Validation(format!(
            "pca needs >= 2 rows and 1 <= k <= dim, got n={n}, d={d}, k={k}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in data.rows() {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov: Array2<f64> = Array2::zeros((d, d));
    for row in data.rows() {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in i..d {
                cov[[i, j]] += ci * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[[i, j]] / (n - 1) as f64;
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances: Array1<f64> = Array1::zeros(k);
    let mut deflated: Array2<f64> = cov.clone();
    for comp in 0..k {
        // Fixed start vector keeps the result reproducible.
        let mut v = vec![0.0; d];
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = 1.0 + (i as f64) * 1e-3;
        }
        normalize(&mut v);
        for _ in 0..300 {
            let mut next = vec![0.0; d];
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += deflated[[i, j]] * v[j];
                }
                next[i] = acc;
            }
            if normalize(&mut next) < 1e-30 {
                // Rank-deficient remainder: keep the current direction.
                break;
            }
            v = next;
        }
        // Rayleigh quotient = the component's variance.
        let mut lambda = 0.0;
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += deflated[[i, j]] * v[j];
            }
            lambda += v[i] * acc;
        }
        // Sign convention: largest-|entry| coordinate is positive.
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            for vi in v.iter_mut() {
                *vi = -*vi;
            }
        }
        for i in 0..d {
            for j in 0..d {
                deflated[[i, j]] -= lambda * v[i] * v[j];
            }
        }
        variances[comp] = lambda.max(0.0);
        components.push(v);
    }

    let mut projected: Array2<f64> = Array2::zeros((n, k));
    for (r, row) in data.rows().into_iter().enumerate() {
        for (c, comp) in components.iter().enumerate() {
            let mut acc = 0.0;
            for i in 0..d {
                acc += (row[i] - mean[i]) * comp[i];
            }
            projected[[r, c]] = acc;
        }
    }
    Ok((projected, variances))
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Mean silhouette coefficient of a labeled point set. Singleton clusters
/// score 0 by convention; needs at least two clusters.
pub fn silhouette_score(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if labels.len() != n || n < 2 {
        return Err(Error::Validation(format!(
            "silhouette needs one label per point and >= 2 points, got {} labels for {n} points",
            labels.len()
        )));
    }
    let k = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Validation(
            "silhouette needs at least two non-empty clusters".into(),
        ));
    }
    let dist = |a: usize, b: usize| -> f64 {
        let mut sq = 0.0;
        for c in 0..points.ncols() {
            let d = points[[a, c]] - points[[b, c]];
            sq += d * d;
        }
        sq.sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let li = labels[i];
        if sizes[li] == 1 {
            continue; // singleton: s = 0
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
            }
        }
        let a = sums[li] / (sizes[li] - 1) as f64;
        let b = (0..k)
            .filter(|&l| l != li && sizes[l] > 0)
            .map(|l| sums[l] / sizes[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// A metric report: metric name -> value, with the evaluated item count and
/// a hash of the evaluation configuration for provenance.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, f64>,
    pub count: usize,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn new(count: usize, config_hash: impl Into<String>) -> Self {
        MetricsReport {
            metrics: BTreeMap::new(),
            count,
            config_hash: config_hash.into(),
        }
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    /// CSV body: header `metric,value` then one row per metric in name order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, value) in &self.metrics {
            out.push_str(&format!("{name},{value}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("metrics serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use rand::SeedableRng;

    fn constant_frame(h: usize, w: usize, v: f32) -> Array3<f32> {
        Array3::from_elem((h, w, 3), v)
    }

    #[test]
    fn psnr_examples() {
        let img = constant_frame(8, 8, 0.4);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP_DB);

        // A uniform 0.1 offset gives MSE = 0.01, i.e. exactly 20 dB.
        let mut off = img.clone();
        for v in off.iter_mut() {
            *v += 0.1;
        }
        let db = psnr(&img, &off).unwrap();
        assert!((db - 20.0).abs() < 1e-4, "psnr = {db}");
        assert_eq!(psnr(&img, &off).unwrap(), psnr(&off, &img).unwrap());

        let other = constant_frame(8, 9, 0.4);
        assert!(psnr(&img, &other).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise_magnitude() {
        let img = constant_frame(16, 16, 0.5);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.03, 0.1] {
            let mut noisy = img.clone();
            for v in noisy.iter_mut() {
                *v += (sigma * crate::head::rig::gaussian(&mut rng)) as f32;
            }
            let db = psnr(&img, &noisy).unwrap();
            assert!(db < last, "sigma {sigma}: {db} !< {last}");
            last = db;
        }
    }

    #[test]
    fn aed_apd_examples() {
        let a = vec![arr1(&[0.1, 0.2, 0.3]), arr1(&[0.0, 0.0, 0.0])];
        assert_eq!(aed(&a, &a).unwrap(), 0.0);

        // Constant offset 0.1 in every coefficient -> distance 0.1.
        let b: Vec<_> = a.iter().map(|v| v + 0.1).collect();
        assert!((aed(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert!((apd(&a, &b).unwrap() - 0.1).abs() < 1e-12);

        // Dataset order does not change the dataset mean.
        let a_rev: Vec<_> = a.iter().rev().cloned().collect();
        let b_rev: Vec<_> = b.iter().rev().cloned().collect();
        assert_eq!(aed(&a, &b).unwrap(), aed(&a_rev, &b_rev).unwrap());

        let short = vec![arr1(&[0.1])];
        assert!(aed(&a, &short).is_err());
    }

    #[test]
    fn flicker_examples() {
        let same = VideoClip::new(vec![constant_frame(4, 4, 0.3); 5], 25.0).unwrap();
        assert_eq!(flicker(&same).unwrap(), 0.0);

        let alternating = VideoClip::new(
            vec![
                constant_frame(4, 4, 0.0),
                constant_frame(4, 4, 1.0),
                constant_frame(4, 4, 0.0),
            ],
            25.0,
        )
        .unwrap();
        assert_eq!(flicker(&alternating).unwrap(), 1.0);

        // Linear ramp 0..1 over 11 frames: every adjacent step is 0.1.
        let ramp = VideoClip::new(
            (0..11).map(|t| constant_frame(4, 4, t as f32 / 10.0)).collect(),
            25.0,
        )
        .unwrap();
        assert!((flicker(&ramp).unwrap() - 0.1).abs() < 1e-6);

        let single = VideoClip::new(vec![constant_frame(4, 4, 0.0)], 25.0).unwrap();
        assert!(flicker(&single).is_err());
    }

    /// A clip whose content translates by an integer step each frame.
    fn translating_clip(steps: usize, dx: usize) -> VideoClip {
        let (h, w) = (12, 16);
        let frames = (0..steps)
            .map(|t| {
                let mut f = Array3::zeros((h, w, 3));
                for y in 0..h {
                    for x in 0..w {
                        // A diagonal intensity pattern shifted right by t*dx.
                        let sx = (x + w - (t * dx) % w) % w;
                        let v = ((sx * 7 + y * 3) % 13) as f32 / 13.0;
                        for c in 0..3 {
                            f[[y, x, c]] = v;
                        }
                    }
                }
                f
            })
            .collect();
        VideoClip::new(frames, 25.0).unwrap()
    }

    #[test]
    fn warp_error_examples() {
        // Static clip, zero flow: nothing moves, error 0.
        let still = VideoClip::new(vec![constant_frame(8, 8, 0.6); 3], 25.0).unwrap();
        assert_eq!(warp_error(&still, &still, &zero_flow()).unwrap(), 0.0);

        // Integer translation with the exact flow cancels perfectly on the
        // valid region (the pattern wraps, but interior pixels see the same
        // content one step back).
        let clip = translating_clip(4, 2);
        let exact = ConstantFlow { dx: 2.0, dy: 0.0 };
        let err = warp_error(&clip, &clip, &exact).unwrap();
        assert!(err < 1e-6, "exact-flow warp error = {err}");

        // Zero flow degenerates to direct adjacent-frame L1.
        let zero_err = warp_error(&clip, &clip, &zero_flow()).unwrap();
        let mut direct = 0.0;
        let mut count = 0usize;
        for t in 0..clip.frames.len() - 1 {
            for (a, b) in clip.frames[t].iter().zip(clip.frames[t + 1].iter()) {
                direct += (*b as f64 - *a as f64).abs();
                count += 1;
            }
        }
        assert!((zero_err - direct / count as f64).abs() < 1e-9);
    }

    #[test]
    fn warp_error_masks_flow_that_exits_the_frame() {
        let clip = translating_clip(2, 2);
        // dx larger than the frame: every source sample lands outside.
        let off_frame = ConstantFlow { dx: 100.0, dy: 0.0 };
        assert!(warp_error(&clip, &clip, &off_frame).is_err());
    }

    #[test]
    fn random_projection_embedding_is_deterministic_plumbing() {
        let img = translating_clip(1, 0).frames[0].clone();
        let provider = RandomProjection { seed: 3, dim: 8 };
        let e1 = provider.embed(&img);
        let e2 = provider.embed(&img);
        assert_eq!(e1, e2);
        assert_eq!(e1.len(), 8);
        assert!((cosine_similarity(&e1, &e2).unwrap() - 1.0).abs() < 1e-12);

        let other = constant_frame(12, 16, 0.9);
        let e3 = provider.embed(&other);
        assert!(cosine_similarity(&e1, &e3).unwrap() < 1.0);
    }

    #[test]
    fn pca_recovers_a_known_principal_axis() {
        // Points spread along (1, 1)/sqrt(2) with tiny orthogonal jitter:
        // the first component must align with that axis and carry almost
        // all the variance.
        let mut data = Array2::zeros((40, 2));
        for i in 0..40 {
            let t = (i as f64 - 20.0) / 10.0;
            let jitter = 1e-3 * ((i * 37 % 11) as f64 - 5.0);
            data[[i, 0]] = t + jitter;
            data[[i, 1]] = t - jitter;
        }
        let (proj, vars) = pca_project(&data, 2).unwrap();
        assert!(vars[0] > 1000.0 * vars[1], "variances {vars:?}");
        // Projection onto the diagonal equals the centered (x + y)/sqrt(2).
        let mx = data.column(0).sum() / 40.0;
        let my = data.column(1).sum() / 40.0;
        for i in 0..40 {
            let expect = ((data[[i, 0]] - mx) + (data[[i, 1]] - my)) / 2f64.sqrt();
            assert!(
                (proj[[i, 0]] - expect).abs() < 1e-3,
                "row {i}: {} vs {expect}",
                proj[[i, 0]]
            );
        }

        let (p2, _) = pca_project(&data, 2).unwrap();
        assert_eq!(proj, p2);
        assert!(pca_project(&data, 3).is_err());
    }

    #[test]
    fn silhouette_separates_tight_far_clusters() {
        // Two clusters 100 units apart with radius ~0.1: near-perfect score.
        let mut pts = Array2::zeros((8, 2));
        for i in 0..4 {
            pts[[i, 0]] = 0.1 * i as f64;
            pts[[i + 4, 0]] = 100.0 + 0.1 * i as f64;
        }
        let labels = [0, 0, 0, 0, 1, 1, 1, 1];
        let s = silhouette_score(&pts, &labels).unwrap();
        assert!(s > 0.99, "silhouette = {s}");

        // Random-ish labels on the same points score much worse.
        let bad = [0, 1, 0, 1, 0, 1, 0, 1];
        assert!(silhouette_score(&pts, &bad).unwrap() < 0.1);

        assert!(silhouette_score(&pts, &[0; 8]).is_err());
    }

    #[test]
    fn metrics_report_serializes_stably() {
        let mut report = MetricsReport::new(10, "abc123");
        report.insert("psnr", 31.5);
        report.insert("aed", 0.02);
        let csv = report.to_csv();
        assert_eq!(csv, "metric,value\naed,0.02\npsnr,31.5\n");
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"config_hash\":\"abc123\""));
        assert!(json.contains("\"count\":10"));
    }
}
