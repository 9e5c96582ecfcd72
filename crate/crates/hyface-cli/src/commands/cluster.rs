//! `cluster-tokens`: tokenize every dataset frame, project each scale's
//! sub-tokens to 2-D with PCA, and score how well the scales separate
//! identities (silhouette against the video id).

use std::collections::BTreeMap;
use std::path::Path;

use hyface_core::metrics::{pca_project, silhouette_score, MetricsReport};
use hyface_nn::checkpoint::arch_hash;
use hyface_nn::{Error, Result};
use ndarray::Array2;

use crate::manifest::RunManifest;
use crate::pipeline::{resolve_dataset, InferenceModel};

pub const EMBEDDING_HEADER: &str = "scale,video_id,frame,x,y";

pub fn run(checkpoint: &Path, data: &Path, out: &Path) -> Result<RunManifest> {
    let model = InferenceModel::load(checkpoint)?;
    let (records, _root) = resolve_dataset(data)?;

    // Stable identity labels: sorted unique video ids.
    let mut label_of: BTreeMap<&str, usize> = BTreeMap::new();
    for rec in &records {
        let next = label_of.len();
        label_of.entry(rec.video_id.as_str()).or_insert(next);
    }
    if label_of.len() < 2 {
        return Err(Error::Validation(format!(
            "token clustering needs at least 2 identities, found {}",
            label_of.len()
        )));
    }
    let labels: Vec<usize> = records.iter().map(|r| label_of[r.video_id.as_str()]).collect();

    // One (frames, dim) matrix per scale, rows in manifest order.
    let n = records.len();
    let scales = model.bundle.config.tokenizer.k();
    let dim = model.bundle.config.tokenizer.token_dim;
    let mut per_scale = vec![Array2::<f64>::zeros((n, dim)); scales];
    for (i, rec) in records.iter().enumerate() {
        let img = model.load_image(&rec.image)?;
        let (_est, token, _images) = model.encode(&img)?;
        for (s, sub) in token.sub_tokens().iter().enumerate() {
            let row = sub.get(0)?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
            for (j, v) in row.into_iter().enumerate() {
                per_scale[s][[i, j]] = v;
            }
        }
    }

    let mut report = MetricsReport::new(n, arch_hash(&model.bundle.config)?);
    let mut csv = String::from(EMBEDDING_HEADER);
    csv.push('\n');
    for (s, matrix) in per_scale.iter().enumerate() {
        let (coords, _explained) = pca_project(matrix, 2)?;
        let score = silhouette_score(&coords, &labels)?;
        report.insert(&format!("silhouette_scale{s}"), score);
        for (i, rec) in records.iter().enumerate() {
            csv.push_str(&format!(
                "{s},{},{},{},{}\n",
                rec.video_id,
                rec.frame,
                coords[[i, 0]],
                coords[[i, 1]]
            ));
        }
        println!("cluster-tokens: scale {s} silhouette {score:.4}");
    }

    let csv_path = out.join("embeddings.csv");
    std::fs::write(&csv_path, csv).map_err(|e| hyface_core::Error::io(&csv_path, e))?;
    report.write_json(&out.join("metrics.json"))?;

    let mut manifest = RunManifest::new("cluster-tokens");
    manifest.input("data", data.display());
    manifest.input("checkpoint", checkpoint.display());
    manifest.input("frames", n);
    manifest.input("identities", label_of.len());
    manifest.output("embeddings.csv");
    manifest.output("metrics.json");
    Ok(manifest)
}
