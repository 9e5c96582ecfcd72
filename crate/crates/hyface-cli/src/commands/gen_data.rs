//! `gen-data`: render a synthetic multi-identity dataset into the output
//! directory — images, landmark files, manifest, rig and ground truth.

use std::path::Path;

use hyface_core::data::synthetic::generate_synthetic;
use hyface_core::head::rig::generate_rig;
use hyface_nn::Result;

use crate::config::CliConfig;
use crate::manifest::RunManifest;

pub fn run(config: &CliConfig, out: &Path) -> Result<RunManifest> {
    let rig = generate_rig(&config.rig)?;
    let dataset = generate_synthetic(&config.scene, &rig, out)?;
    let videos = config.scene.count.div_ceil(config.scene.frames_per_video);
    println!(
        "gen-data: {} frames in {} videos at {}x{} -> {}",
        dataset.records.len(),
        videos,
        config.scene.resolution,
        config.scene.resolution,
        out.display()
    );

    let mut manifest = RunManifest::new("gen-data");
    manifest.seed(config.scene.seed);
    manifest.input("count", config.scene.count);
    manifest.input("frames_per_video", config.scene.frames_per_video);
    manifest.input("resolution", config.scene.resolution);
    manifest.output("manifest.csv");
    manifest.output("rig.safetensors");
    manifest.output("gt_params.safetensors");
    manifest.output("images");
    manifest.output("landmarks");
    Ok(manifest)
}
