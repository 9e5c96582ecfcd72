//! `eval`: reconstruct every dataset frame and report image, landmark,
//! temporal and — when ground truth is available — parameter metrics.

use std::collections::BTreeMap;
use std::path::Path;

use hyface_core::coords::{ndc_to_pixel, unit_to_pixel};
use hyface_core::data::read_landmarks;
use hyface_core::data::synthetic::GtParams;
use hyface_core::head::N_LANDMARKS;
use hyface_core::metrics::{aed, apd, flicker, psnr, MetricsReport, VideoClip};
use hyface_nn::bridge::chw_to_image;
use hyface_nn::checkpoint::arch_hash;
use hyface_nn::Result;
use ndarray::{Array1, Array3};

use crate::manifest::RunManifest;
use crate::pipeline::{resolve_dataset, InferenceModel};

/// Synthetic scenes are rendered at a nominal rate; only frame order matters
/// for the flicker statistic.
const EVAL_FPS: f64 = 25.0;

pub fn run(checkpoint: &Path, data: &Path, out: &Path) -> Result<RunManifest> {
    let model = InferenceModel::load(checkpoint)?;
    let (records, root) = resolve_dataset(data)?;
    let res = model.resolution();

    let gt_path = root.join("gt_params.safetensors");
    let gt = if gt_path.exists() {
        Some(GtParams::load(&gt_path)?)
    } else {
        None
    };

    let mut psnr_sum = 0.0;
    let mut lmk_px_sum = 0.0;
    let mut by_video: BTreeMap<String, Vec<(u64, Array3<f32>)>> = BTreeMap::new();
    let mut psi_pred = Vec::new();
    let mut psi_true = Vec::new();
    let mut pose_pred = Vec::new();
    let mut pose_true = Vec::new();

    for (i, rec) in records.iter().enumerate() {
        let img = model.load_image(&rec.image)?;
        let (estimate, token, images) = model.encode(&img)?;
        let syn = model.synthesize(&estimate, &token, &images)?;
        let i_hat = chw_to_image(&syn.i_hat.get(0)?)?;

        psnr_sum += psnr(&img, &i_hat)?;
        lmk_px_sum += landmark_pixel_error(&model, &rec.landmarks, &syn.positions, &estimate, res)?;
        by_video
            .entry(rec.video_id.clone())
            .or_default()
            .push((rec.frame, i_hat));

        if let Some(gt) = &gt {
            if gt.len() != records.len() {
                return Err(hyface_nn::Error::Validation(format!(
                    "ground truth holds {} entries but the manifest lists {} frames",
                    gt.len(),
                    records.len()
                )));
            }
            let pred = estimate.to_head_params(0)?;
            let truth = gt.params(i);
            psi_pred.push(pred.psi.clone());
            psi_true.push(truth.psi.clone());
            pose_pred.push(pose_vector(&pred));
            pose_true.push(pose_vector(&truth));
        }
    }

    let n = records.len();
    let mut report = MetricsReport::new(n, arch_hash(&model.bundle.config)?);
    report.insert("psnr_db", psnr_sum / n as f64);
    report.insert("landmark_px", lmk_px_sum / n as f64);

    let mut flicker_sum = 0.0;
    let mut clips = 0usize;
    for frames in by_video.values_mut() {
        if frames.len() < 2 {
            continue;
        }
        frames.sort_by_key(|(frame, _)| *frame);
        let clip = VideoClip::new(frames.iter().map(|(_, f)| f.clone()).collect(), EVAL_FPS)?;
        flicker_sum += flicker(&clip)?;
        clips += 1;
    }
    if clips > 0 {
        report.insert("flicker", flicker_sum / clips as f64);
    }
    if !psi_pred.is_empty() {
        report.insert("aed", aed(&psi_pred, &psi_true)?);
        report.insert("apd", apd(&pose_pred, &pose_true)?);
    }

    report.write_csv(&out.join("metrics.csv"))?;
    report.write_json(&out.join("metrics.json"))?;
    println!(
        "eval: {} frames, mean PSNR {:.2} dB, mean landmark error {:.3} px",
        n,
        psnr_sum / n as f64,
        lmk_px_sum / n as f64
    );

    let mut manifest = RunManifest::new("eval");
    manifest.input("data", data.display());
    manifest.input("checkpoint", checkpoint.display());
    manifest.input("frames", n);
    manifest.output("metrics.csv");
    manifest.output("metrics.json");
    Ok(manifest)
}

/// Mean Euclidean distance in pixels between the detected landmarks on disk
/// and the estimate's projected landmarks.
fn landmark_pixel_error(
    model: &InferenceModel,
    landmark_path: &Path,
    positions: &candle_core::Tensor,
    estimate: &hyface_nn::geometry::GeometryEstimate,
    res: usize,
) -> Result<f64> {
    let detected = read_landmarks(landmark_path)?;
    let projected = model
        .renderer
        .landmarks_ndc(positions, &estimate.cam)?
        .get(0)?
        .to_dtype(candle_core::DType::F64)?
        .to_vec2::<f64>()?;
    let mut sum = 0.0;
    for (k, row) in projected.iter().enumerate().take(N_LANDMARKS) {
        let (px, py) = ndc_to_pixel(row[0], row[1], res, res);
        let (dx, dy) = unit_to_pixel(detected[[k, 0]], detected[[k, 1]], res, res);
        sum += ((px - dx).powi(2) + (py - dy).powi(2)).sqrt();
    }
    Ok(sum / N_LANDMARKS as f64)
}

/// Six-dimensional pose vector `[theta_h | cam]` for pose-distance metrics.
fn pose_vector(p: &hyface_core::head::HeadParams) -> Array1<f64> {
    let mut v = Vec::with_capacity(6);
    v.extend_from_slice(&p.theta_h);
    v.extend_from_slice(&p.cam_c);
    Array1::from_vec(v)
}
