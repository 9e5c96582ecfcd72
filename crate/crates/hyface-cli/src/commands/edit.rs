//! `edit`: recombine two reconstructions. The geometry/appearance split
//! makes the edits surgical — swapping the token repaints the same mesh,
//! swapping shape-and-token changes who is rendered, and transferring the
//! expression group moves a grimace between faces without touching identity.

use std::path::Path;

use hyface_nn::geometry::GeometryEstimate;
use hyface_nn::Result;

use crate::cli::EditMode;
use crate::manifest::RunManifest;
use crate::pipeline::{save_frame_png, write_params_json, write_token_txt, InferenceModel};

pub fn run(
    mode: EditMode,
    checkpoint: &Path,
    source: &Path,
    target: &Path,
    out: &Path,
) -> Result<RunManifest> {
    let model = InferenceModel::load(checkpoint)?;
    let src = model.load_image(source)?;
    let tgt = model.load_image(target)?;
    let (est_s, tok_s, images_s) = model.encode(&src)?;
    let (est_t, tok_t, _images_t) = model.encode(&tgt)?;

    let (geometry, token) = match mode {
        // Keep the source geometry, repaint with the target's appearance.
        EditMode::SwapToken => (est_s.clone(), tok_t),
        // Target identity shape and appearance on the source's pose and
        // expression.
        EditMode::SwapShapeAndToken => (
            GeometryEstimate {
                beta: est_t.beta.clone(),
                ..est_s.clone()
            },
            tok_t,
        ),
        // Move the target's expression group onto the source, keeping the
        // source's shape, pose and appearance.
        EditMode::TransferExpression => (est_s.with_psi_group(&est_t.psi_group()?)?, tok_s),
    };
    // The source frame supplies the background either way: edits replace the
    // face region, not the scene.
    let syn = model.synthesize(&geometry, &token, &images_s)?;

    save_frame_png(out.join("edited.png"), &syn.i_hat)?;
    write_params_json(out.join("params.json"), &geometry)?;
    write_token_txt(out.join("token.txt"), &token)?;
    println!(
        "edit {:?}: {} + {} -> {}",
        mode,
        source.display(),
        target.display(),
        out.display()
    );

    let mut manifest = RunManifest::new("edit");
    manifest.input("mode", format!("{mode:?}"));
    manifest.input("source", source.display());
    manifest.input("target", target.display());
    manifest.input("checkpoint", checkpoint.display());
    manifest.output("edited.png");
    manifest.output("params.json");
    manifest.output("token.txt");
    Ok(manifest)
}
