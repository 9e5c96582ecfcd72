//! Rig archive serialization: one safetensors file holding the template,
//! bases, skinning data and landmark anchors, with a JSON manifest (counts,
//! seed, version) in the metadata.
//!
//! The tensor mapping is exposed separately from the file I/O so other
//! archive kinds (checkpoints, in particular) can embed a rig under a name
//! prefix instead of referencing a second file.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::archive::{write_archive, Archive, OwnedTensor};
use crate::error::{Error, Result};

use super::{HeadModelConfig, LandmarkAnchor, N_LANDMARKS};

/// Serialize a rig into named tensors, each name prefixed by `prefix`.
pub fn rig_tensors(
    cfg: &HeadModelConfig,
    prefix: &str,
) -> Result<BTreeMap<String, OwnedTensor>> {
    cfg.validate()?;
    let mut tensors = BTreeMap::new();
    let mut put = |name: &str, t: OwnedTensor| {
        tensors.insert(format!("{prefix}{name}"), t);
    };
    let f64_t = |a: &Array2<f64>| {
        OwnedTensor::from_f64(vec![a.nrows(), a.ncols()], a.as_slice().unwrap())
    };
    put("template", f64_t(&cfg.template));
    put("b_shape", f64_t(&cfg.b_shape));
    put("b_expr", f64_t(&cfg.b_expr));
    put("b_eye", f64_t(&cfg.b_eye));
    put(
        "jaw_weights",
        OwnedTensor::from_f64(
            vec![cfg.jaw_weights.len()],
            cfg.jaw_weights.as_slice().unwrap(),
        ),
    );
    put(
        "jaw_pivot",
        OwnedTensor::from_f64(vec![3], &cfg.jaw_pivot),
    );
    let tri_flat: Vec<i64> = cfg
        .triangles
        .iter()
        .flat_map(|t| t.iter().map(|&i| i as i64))
        .collect();
    put(
        "triangles",
        OwnedTensor::from_i64(vec![cfg.triangles.len(), 3], &tri_flat),
    );
    let anchor_tris: Vec<i64> = cfg.landmark_anchors.iter().map(|a| a.tri as i64).collect();
    let anchor_bary: Vec<f64> = cfg
        .landmark_anchors
        .iter()
        .flat_map(|a| a.bary.into_iter())
        .collect();
    put(
        "anchor_tris",
        OwnedTensor::from_i64(vec![N_LANDMARKS], &anchor_tris),
    );
    put(
        "anchor_bary",
        OwnedTensor::from_f64(vec![N_LANDMARKS, 3], &anchor_bary),
    );
    Ok(tensors)
}

/// The manifest fragment describing a rig's counts, seed and version.
pub fn rig_manifest(cfg: &HeadModelConfig) -> serde_json::Value {
    serde_json::json!({
        "kind": "rig",
        "version": cfg.version,
        "n_vertices": cfg.n_vertices(),
        "n_shape": cfg.n_shape(),
        "n_expr": cfg.n_expr(),
        "n_triangles": cfg.triangles.len(),
        "seed": cfg.seed,
    })
}

/// Rebuild a rig from prefixed tensors in `arc`, validated against its
/// manifest fragment (as produced by [`rig_manifest`]).
pub fn rig_from_archive(
    arc: &Archive,
    prefix: &str,
    manifest: &serde_json::Value,
) -> Result<HeadModelConfig> {
    if manifest["kind"] != "rig" {
        return Err(Error::Archive(format!(
            "not a rig manifest (kind = {})",
            manifest["kind"]
        )));
    }
    let version = manifest["version"].as_str().unwrap_or_default().to_string();
    let seed = manifest["seed"].as_u64().unwrap_or(0);
    let key = |name: &str| format!("{prefix}{name}");

    let to_a2 = |(shape, vals): (Vec<usize>, Vec<f64>)| -> Result<Array2<f64>> {
        if shape.len() != 2 {
            return Err(Error::Archive(format!("expected rank-2 tensor, got {shape:?}")));
        }
        Array2::from_shape_vec((shape[0], shape[1]), vals)
            .map_err(|e| Error::Archive(e.to_string()))
    };
    let template = to_a2(arc.f64_vec(&key("template"))?)?;
    let b_shape = to_a2(arc.f64_vec(&key("b_shape"))?)?;
    let b_expr = to_a2(arc.f64_vec(&key("b_expr"))?)?;
    let b_eye = to_a2(arc.f64_vec(&key("b_eye"))?)?;
    let (_, jw) = arc.f64_vec(&key("jaw_weights"))?;
    let (_, pivot) = arc.f64_vec(&key("jaw_pivot"))?;
    if pivot.len() != 3 {
        return Err(Error::Archive("jaw_pivot must have 3 entries".into()));
    }
    let (tshape, tvals) = arc.i64_vec(&key("triangles"))?;
    if tshape.len() != 2 || tshape[1] != 3 {
        return Err(Error::Archive(format!("triangles must be (n, 3), got {tshape:?}")));
    }
    let triangles: Vec<[usize; 3]> = tvals
        .chunks_exact(3)
        .map(|c| [c[0] as usize, c[1] as usize, c[2] as usize])
        .collect();
    let (_, anchor_tris) = arc.i64_vec(&key("anchor_tris"))?;
    let (bshape, anchor_bary) = arc.f64_vec(&key("anchor_bary"))?;
    if anchor_tris.len() != N_LANDMARKS || bshape != vec![N_LANDMARKS, 3] {
        return Err(Error::Archive("anchor tensors have wrong shape".into()));
    }
    let landmark_anchors = anchor_tris
        .iter()
        .zip(anchor_bary.chunks_exact(3))
        .map(|(&t, b)| LandmarkAnchor {
            tri: t as usize,
            bary: [b[0], b[1], b[2]],
        })
        .collect();

    let cfg = HeadModelConfig {
        template,
        b_shape,
        b_expr,
        b_eye,
        triangles,
        jaw_pivot: [pivot[0], pivot[1], pivot[2]],
        jaw_weights: Array1::from_vec(jw),
        landmark_anchors,
        seed,
        version,
    };
    // Manifest counts must agree with tensor shapes.
    if manifest["n_vertices"].as_u64() != Some(cfg.n_vertices() as u64)
        || manifest["n_shape"].as_u64() != Some(cfg.n_shape() as u64)
        || manifest["n_expr"].as_u64() != Some(cfg.n_expr() as u64)
    {
        return Err(Error::Archive(
            "rig manifest counts disagree with tensor shapes".into(),
        ));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_rig(path: impl AsRef<Path>, cfg: &HeadModelConfig) -> Result<()> {
    write_archive(path, &rig_tensors(cfg, "")?, &rig_manifest(cfg))
}

pub fn load_rig(path: impl AsRef<Path>) -> Result<HeadModelConfig> {
    let arc = Archive::read(path)?;
    if arc.manifest["kind"] != "rig" {
        return Err(Error::Archive(format!(
            "not a rig archive (kind = {})",
            arc.manifest["kind"]
        )));
    }
    rig_from_archive(&arc, "", &arc.manifest.clone())
}
