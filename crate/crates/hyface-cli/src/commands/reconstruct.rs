//! `reconstruct`: encode one image, re-render and re-synthesize it, and dump
//! the recovered parameters and appearance token.

use std::path::Path;

use hyface_nn::Result;

use crate::manifest::RunManifest;
use crate::pipeline::{
    mesh_overlay, save_frame_png, write_params_json, write_token_txt, InferenceModel,
};

pub fn run(checkpoint: &Path, image: &Path, out: &Path) -> Result<RunManifest> {
    let model = InferenceModel::load(checkpoint)?;
    let img = model.load_image(image)?;
    let (estimate, token, images) = model.encode(&img)?;
    let syn = model.synthesize(&estimate, &token, &images)?;

    save_frame_png(out.join("reconstruction.png"), &syn.i_hat)?;
    let overlay = mesh_overlay(&images, &syn.i_v, &syn.mask)?;
    save_frame_png(out.join("overlay.png"), &overlay)?;
    write_params_json(out.join("params.json"), &estimate)?;
    write_token_txt(out.join("token.txt"), &token)?;
    println!(
        "reconstruct: {} -> {} (stage-{} checkpoint)",
        image.display(),
        out.display(),
        model.meta.stage
    );

    let mut manifest = RunManifest::new("reconstruct");
    manifest.input("image", image.display());
    manifest.input("checkpoint", checkpoint.display());
    manifest.output("reconstruction.png");
    manifest.output("overlay.png");
    manifest.output("params.json");
    manifest.output("token.txt");
    Ok(manifest)
}
