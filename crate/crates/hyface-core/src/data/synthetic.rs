//! Synthetic closed-loop datasets: sample head parameters, render with the
//! mesh renderer, and emit images, landmark files, a manifest, and the
//! ground-truth parameters — everything needed to verify reconstruction
//! end-to-end without real footage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{write_landmarks, write_manifest, ManifestRow, SampleRecord};
use crate::archive::{write_archive, Archive, OwnedTensor};
use crate::coords::ndc_to_unit;
use crate::error::{Error, Result};
use crate::head::rig::{gaussian, paint_feature_albedo};
use crate::head::{
    evaluate, project_points, select_landmarks, HeadModelConfig, HeadParams, N_LANDMARKS,
};
use crate::image::save_png;
use crate::render::{dc_only_lighting, rasterize, ShadingParams, MIN_RESOLUTION};

/// A closed uniform sampling interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub fn new(lo: f64, hi: f64) -> Span {
        Span { lo, hi }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::Validation(format!(
                "range {name} = [{}, {}] is degenerate",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.lo + rng.random::<f64>() * (self.hi - self.lo)
    }
}

/// Sampling configuration for one synthetic dataset.
///
/// Samples are grouped into pseudo-videos of `frames_per_video` frames:
/// identity (shape coefficients, skin tone, lighting) is drawn once per
/// video, while expression, jaw, eyes, pose, and camera are redrawn per
/// frame. Defaults keep the rendered head and all projected landmarks
/// comfortably inside the frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub count: usize,
    pub resolution: usize,
    pub seed: u64,
    pub frames_per_video: usize,
    /// Shape coefficient range (per coefficient, uniform).
    pub beta: Span,
    /// Expression coefficient range.
    pub psi: Span,
    /// Jaw opening angle, radians about the x axis.
    pub jaw: Span,
    /// Eye-closure blendshape weights.
    pub eye: Span,
    /// Head yaw (y axis), radians.
    pub yaw: Span,
    /// Head pitch (x axis), radians.
    pub pitch: Span,
    /// Head roll (z axis), radians.
    pub roll: Span,
    pub cam_scale: Span,
    pub cam_shift: Span,
    /// Per-channel skin tint offset around the base skin tone.
    pub skin_tint: Span,
    /// Band-1 lighting coefficient perturbation.
    pub light: Span,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            count: 16,
            resolution: 64,
            seed: 0,
            frames_per_video: 8,
            beta: Span::new(-1.0, 1.0),
            psi: Span::new(-1.0, 1.0),
            jaw: Span::new(0.0, 0.25),
            eye: Span::new(0.0, 0.6),
            yaw: Span::new(-0.3, 0.3),
            pitch: Span::new(-0.12, 0.12),
            roll: Span::new(-0.08, 0.08),
            cam_scale: Span::new(0.95, 1.05),
            cam_shift: Span::new(-0.05, 0.05),
            skin_tint: Span::new(-0.08, 0.08),
            light: Span::new(-0.15, 0.15),
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Validation("sample count must be >= 1".into()));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(Error::Validation(format!(
                "resolution {} below minimum {MIN_RESOLUTION}",
                self.resolution
            )));
        }
        if self.frames_per_video == 0 {
            return Err(Error::Validation("frames_per_video must be >= 1".into()));
        }
        for (name, span) in [
            ("beta", &self.beta),
            ("psi", &self.psi),
            ("jaw", &self.jaw),
            ("eye", &self.eye),
            ("yaw", &self.yaw),
            ("pitch", &self.pitch),
            ("roll", &self.roll),
            ("cam_scale", &self.cam_scale),
            ("cam_shift", &self.cam_shift),
            ("skin_tint", &self.skin_tint),
            ("light", &self.light),
        ] {
            span.validate(name)?;
        }
        if self.cam_scale.lo <= 0.0 {
            return Err(Error::Validation(format!(
                "camera scale range must stay positive, got lo = {}",
                self.cam_scale.lo
            )));
        }
        Ok(())
    }
}

/// Ground-truth parameters for every sample, row `i` = sample `i`.
#[derive(Debug, Clone)]
pub struct GtParams {
    pub beta: Array2<f64>,
    pub psi: Array2<f64>,
    pub theta_j: Array2<f64>,
    pub eye_b: Array2<f64>,
    pub theta_h: Array2<f64>,
    pub cam_c: Array2<f64>,
}

impl GtParams {
    pub fn len(&self) -> usize {
        self.beta.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Assemble the [`HeadParams`] of sample `i`.
    pub fn params(&self, i: usize) -> HeadParams {
        let row3 = |a: &Array2<f64>| [a[[i, 0]], a[[i, 1]], a[[i, 2]]];
        HeadParams {
            beta: self.beta.row(i).to_owned(),
            psi: self.psi.row(i).to_owned(),
            theta_j: row3(&self.theta_j),
            eye_b: [self.eye_b[[i, 0]], self.eye_b[[i, 1]]],
            theta_h: row3(&self.theta_h),
            cam_c: row3(&self.cam_c),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64) -> Result<()> {
        let t = |a: &Array2<f64>| {
            OwnedTensor::from_f64(vec![a.nrows(), a.ncols()], a.as_slice().unwrap())
        };
        let mut tensors = BTreeMap::new();
        tensors.insert("beta".to_string(), t(&self.beta));
        tensors.insert("psi".to_string(), t(&self.psi));
        tensors.insert("theta_j".to_string(), t(&self.theta_j));
        tensors.insert("eye_b".to_string(), t(&self.eye_b));
        tensors.insert("theta_h".to_string(), t(&self.theta_h));
        tensors.insert("cam_c".to_string(), t(&self.cam_c));
        let manifest = serde_json::json!({
            "kind": "synthetic_gt",
            "version": 1,
            "count": self.len(),
            "seed": seed,
        });
        write_archive(path, &tensors, &manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GtParams> {
        let arc = Archive::read(path)?;
        if arc.manifest["kind"] != "synthetic_gt" {
            return Err(Error::Archive(format!(
                "not a ground-truth archive (kind = {})",
                arc.manifest["kind"]
            )));
        }
        let grab = |name: &str| -> Result<Array2<f64>> {
            let (shape, data) = arc.f64_vec(name)?;
            if shape.len() != 2 {
                return Err(Error::Archive(format!(
                    "tensor {name} must be rank 2, got {shape:?}"
                )));
            }
            Array2::from_shape_vec((shape[0], shape[1]), data)
                .map_err(|e| Error::Archive(format!("tensor {name}: {e}")))
        };
        Ok(GtParams {
            beta: grab("beta")?,
            psi: grab("psi")?,
            theta_j: grab("theta_j")?,
            eye_b: grab("eye_b")?,
            theta_h: grab("theta_h")?,
            cam_c: grab("cam_c")?,
        })
    }
}

/// A generated dataset: records as a loader would see them, plus the
/// ground truth that real data never has.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
    pub gt: GtParams,
}

impl SyntheticDataset {
    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn rig_path(&self) -> PathBuf {
        self.root.join("rig.safetensors")
    }

    pub fn gt_path(&self) -> PathBuf {
        self.root.join("gt_params.safetensors")
    }
}

/// Base skin / lip tones for the painted albedo.
const SKIN_BASE: [f64; 3] = [0.72, 0.57, 0.47];
const LIP_BASE: [f64; 3] = [0.62, 0.28, 0.30];

/// How many redraws to attempt when a sampled pose pushes landmarks
/// off-frame before giving up on the configured ranges.
const MAX_REDRAWS: usize = 100;

/// Identity-level state shared by all frames of one pseudo-video.
struct VideoState {
    beta: Array1<f64>,
    albedo: Array2<f64>,
    sh: Array2<f64>,
}

fn draw_video_state<R: Rng>(
    rng: &mut R,
    rig: &HeadModelConfig,
    spec: &SyntheticSceneSpec,
) -> VideoState {
    let beta = Array1::from_iter((0..rig.n_shape()).map(|_| spec.beta.sample(rng)));
    let mut skin = SKIN_BASE;
    for c in skin.iter_mut() {
        *c = (*c + spec.skin_tint.sample(rng)).clamp(0.05, 0.95);
    }
    let albedo = paint_feature_albedo(rig, skin, LIP_BASE, 1.0);
    let mut sh = dc_only_lighting();
    for band in 1..4 {
        for c in 0..3 {
            sh[[band, c]] = spec.light.sample(rng);
        }
    }
    VideoState { beta, albedo, sh }
}

fn draw_frame_params<R: Rng>(
    rng: &mut R,
    rig: &HeadModelConfig,
    spec: &SyntheticSceneSpec,
    video: &VideoState,
) -> HeadParams {
    HeadParams {
        beta: video.beta.clone(),
        psi: Array1::from_iter((0..rig.n_expr()).map(|_| spec.psi.sample(rng))),
        theta_j: [spec.jaw.sample(rng), 0.0, 0.0],
        eye_b: [spec.eye.sample(rng), spec.eye.sample(rng)],
        theta_h: [
            spec.pitch.sample(rng),
            spec.yaw.sample(rng),
            spec.roll.sample(rng),
        ],
        cam_c: [
            spec.cam_scale.sample(rng),
            spec.cam_shift.sample(rng),
            spec.cam_shift.sample(rng),
        ],
    }
}

/// Generate a dataset under `out_dir` (created if missing): PNG frames,
/// landmark files, `manifest.csv`, `gt_params.safetensors`, and a copy of
/// the rig. Byte-deterministic for a given spec and rig.
pub fn generate_synthetic(
    spec: &SyntheticSceneSpec,
    rig: &HeadModelConfig,
    out_dir: impl AsRef<Path>,
) -> Result<SyntheticDataset> {
    spec.validate()?;
    rig.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    let images_dir = root.join("images");
    let lms_dir = root.join("landmarks");
    for d in [&root, &images_dir, &lms_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    // Burn one gaussian so the stream layout has room to evolve without
    // silently colliding with older datasets.
    let _ = gaussian(&mut rng);

    let n = spec.count;
    let mut gt = GtParams {
        beta: Array2::zeros((n, rig.n_shape())),
        psi: Array2::zeros((n, rig.n_expr())),
        theta_j: Array2::zeros((n, 3)),
        eye_b: Array2::zeros((n, 2)),
        theta_h: Array2::zeros((n, 3)),
        cam_c: Array2::zeros((n, 3)),
    };
    let mut rows = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    let mut video_state: Option<VideoState> = None;

    for i in 0..n {
        if i % spec.frames_per_video == 0 {
            video_state = Some(draw_video_state(&mut rng, rig, spec));
        }
        let video = video_state.as_ref().unwrap();

        // Redraw per-frame parameters until every projected landmark lands
        // inside the image; deterministic because the redraws consume the
        // same seeded stream.
        let mut chosen = None;
        for _attempt in 0..MAX_REDRAWS {
            let params = draw_frame_params(&mut rng, rig, spec, video);
            let vs = evaluate(rig, &params)?;
            let lms3 = select_landmarks(rig, &vs)?;
            let ndc = project_points(&lms3, &params)?;
            let mut unit = Array2::zeros((N_LANDMARKS, 2));
            let mut ok = true;
            for l in 0..N_LANDMARKS {
                let (u, v) = ndc_to_unit(ndc[[l, 0]], ndc[[l, 1]]);
                if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
                    ok = false;
                    break;
                }
                unit[[l, 0]] = u;
                unit[[l, 1]] = v;
            }
            if ok {
                chosen = Some((params, vs, unit));
                break;
            }
        }
        let (params, vs, unit_lms) = chosen.ok_or_else(|| {
            Error::Validation(format!(
                "sample {i}: sampling ranges keep pushing landmarks off-frame \
                 ({MAX_REDRAWS} redraws)"
            ))
        })?;

        let shading = ShadingParams {
            vertex_albedo: video.albedo.clone(),
            sh_coeffs: video.sh.clone(),
        };
        let bundle = rasterize(&vs, &params, &shading, &rig.triangles, spec.resolution)?;
        let image_rel = format!("images/{i:05}.png");
        let lms_rel = format!("landmarks/{i:05}.txt");
        save_png(root.join(&image_rel), &bundle.mesh_image)?;
        write_landmarks(root.join(&lms_rel), &unit_lms)?;

        for (dst, src) in gt.beta.row_mut(i).iter_mut().zip(params.beta.iter()) {
            *dst = *src;
        }
        for (dst, src) in gt.psi.row_mut(i).iter_mut().zip(params.psi.iter()) {
            *dst = *src;
        }
        for c in 0..3 {
            gt.theta_j[[i, c]] = params.theta_j[c];
            gt.theta_h[[i, c]] = params.theta_h[c];
            gt.cam_c[[i, c]] = params.cam_c[c];
        }
        gt.eye_b[[i, 0]] = params.eye_b[0];
        gt.eye_b[[i, 1]] = params.eye_b[1];

        let video_id = format!("vid{:04}", i / spec.frames_per_video);
        rows.push(ManifestRow {
            image: image_rel.clone(),
            landmarks: lms_rel.clone(),
            video_id: video_id.clone(),
            frame: (i % spec.frames_per_video) as u64,
        });
        records.push(SampleRecord {
            image: root.join(&image_rel),
            landmarks: root.join(&lms_rel),
            video_id,
            frame: (i % spec.frames_per_video) as u64,
        });
    }

    write_manifest(root.join("manifest.csv"), &rows)?;
    gt.save(root.join("gt_params.safetensors"), spec.seed)?;
    crate::head::save_rig(root.join("rig.safetensors"), rig)?;

    Ok(SyntheticDataset { root, records, gt })
}
