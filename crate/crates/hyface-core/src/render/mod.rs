//! Differentiable mesh rendering: SH-shaded z-buffer rasterization of the
//! head model into a [`RenderBundle`], plus background masking.

pub mod raster;
pub mod sh;

pub use raster::{rasterize_screen, rasterize_vjp, RasterOutput};
pub use sh::{dc_only_lighting, sh_basis, shade_sh, SH_DC};

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::head::{project, HeadParams, VertexSet};

/// Smallest supported framebuffer edge.
pub const MIN_RESOLUTION: usize = 16;

/// Default render resolution; tests use 64 for speed.
pub const DEFAULT_RESOLUTION: usize = 224;

/// Per-vertex albedo and SH lighting.
#[derive(Debug, Clone)]
pub struct ShadingParams {
    /// `(n_vertices, 3)` albedo in `[0, 1]`.
    pub vertex_albedo: Array2<f64>,
    /// `(9, 3)` spherical-harmonics lighting coefficients.
    pub sh_coeffs: Array2<f64>,
}

impl ShadingParams {
    /// The fixed rendering inputs used by the token pipeline: uniform
    /// mid-gray albedo under DC-only lighting, so the mesh image shows pure
    /// geometry at constant brightness.
    pub fn neutral(n_vertices: usize) -> Self {
        let mut albedo = Array2::zeros((n_vertices, 3));
        albedo.fill(0.5);
        ShadingParams {
            vertex_albedo: albedo,
            sh_coeffs: dc_only_lighting(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .vertex_albedo
            .iter()
            .any(|&a| !(0.0..=1.0).contains(&a))
        {
            return Err(Error::Validation("vertex albedo must lie in [0, 1]".into()));
        }
        if self.sh_coeffs.dim() != (9, 3) {
            return Err(Error::Validation(format!(
                "sh_coeffs must be (9, 3), got {:?}",
                self.sh_coeffs.dim()
            )));
        }
        Ok(())
    }
}

/// One rendered view of the head.
pub struct RenderBundle {
    /// `(h, w, 3)` shaded mesh image in `[0, 1]`; zero outside the face.
    pub mesh_image: Array3<f32>,
    /// `(h, w)` binary face coverage.
    pub face_mask: Array2<f32>,
    /// `(h, w, 3)` background (an input image with the face region zeroed).
    /// Starts all-zero; fill with [`RenderBundle::set_background`].
    pub background: Array3<f32>,
    /// `(h, w)` interpolated depth, larger = nearer, zero outside the face.
    pub depth: Array2<f32>,
    /// Zero-area triangles skipped while rasterizing.
    pub degenerate_triangles: usize,
}

impl RenderBundle {
    /// Derive the background channel from an input image: `I * (1 - mask)`.
    pub fn set_background(&mut self, input: &Array3<f32>) -> Result<()> {
        self.background = mask_background(input, &self.face_mask)?;
        Ok(())
    }
}

/// Rasterize an evaluated head: SH-shade the vertices, apply the
/// weak-perspective camera from `params`, and z-buffer the triangles into a
/// square `resolution x resolution` framebuffer.
pub fn rasterize(
    vertices: &VertexSet,
    params: &HeadParams,
    shading: &ShadingParams,
    triangles: &[[usize; 3]],
    resolution: usize,
) -> Result<RenderBundle> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::Validation(format!(
            "resolution {resolution} below minimum {MIN_RESOLUTION}"
        )));
    }
    shading.validate()?;
    let colors = shade_sh(&vertices.normals, &shading.vertex_albedo, &shading.sh_coeffs)?;
    let projected = project(vertices, params)?;
    let v = vertices.positions.nrows();
    let mut screen = Array2::zeros((v, 3));
    for i in 0..v {
        screen[[i, 0]] = projected[[i, 0]];
        screen[[i, 1]] = projected[[i, 1]];
        // Weak perspective: depth is the (rotated) model-space z.
        screen[[i, 2]] = vertices.positions[[i, 2]];
    }
    let out = rasterize_screen(&screen, &colors, triangles, resolution, resolution)?;
    Ok(RenderBundle {
        mesh_image: out.color,
        face_mask: out.mask,
        background: Array3::zeros((resolution, resolution, 3)),
        depth: out.depth,
        degenerate_triangles: out.degenerate_triangles,
    })
}

/// Zero the face region of an input image: `I_b = I * (1 - face_mask)`.
pub fn mask_background(input: &Array3<f32>, face_mask: &Array2<f32>) -> Result<Array3<f32>> {
    let (h, w, c) = input.dim();
    if face_mask.dim() != (h, w) || c != 3 {
        return Err(Error::Validation(format!(
            "mask_background: image {:?} and mask {:?} shapes disagree",
            input.dim(),
            face_mask.dim()
        )));
    }
    let mut out = input.clone();
    for y in 0..h {
        for x in 0..w {
            let keep = 1.0 - face_mask[[y, x]];
            for ch in 0..3 {
                out[[y, x, ch]] *= keep;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::rig::{generate_rig, RigSpec};
    use crate::head::{evaluate, HeadParams};

    fn flat_triangle_scene() -> (VertexSet, Vec<[usize; 3]>) {
        let positions = ndarray::arr2(&[
            [-0.8, -0.8, 0.5],
            [0.8, -0.8, 0.5],
            [0.0, 0.8, 0.5],
        ]);
        let normals = ndarray::arr2(&[[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]);
        (VertexSet { positions, normals }, vec![[0, 1, 2]])
    }

    /// Identity camera over a rig-free vertex set (empty coefficient vectors).
    fn unit_camera_params() -> HeadParams {
        HeadParams {
            beta: ndarray::Array1::zeros(0),
            psi: ndarray::Array1::zeros(0),
            theta_j: [0.0; 3],
            eye_b: [0.0; 2],
            theta_h: [0.0; 3],
            cam_c: [1.0, 0.0, 0.0],
        }
    }

    #[test]
    fn flat_white_triangle_under_unit_dc_shades_to_band0_constant() {
        // With albedo 1 and raw DC coefficient 1, every covered pixel is
        // exactly Y00 = 0.282095.
        let (vs, tris) = flat_triangle_scene();
        let mut sh_coeffs = Array2::zeros((9, 3));
        for c in 0..3 {
            sh_coeffs[[0, c]] = 1.0;
        }
        let shading = ShadingParams {
            vertex_albedo: Array2::from_elem((3, 3), 1.0),
            sh_coeffs,
        };
        let bundle =
            rasterize(&vs, &unit_camera_params(), &shading, &tris, 16).unwrap();
        let mut covered = 0;
        for y in 0..16 {
            for x in 0..16 {
                if bundle.face_mask[[y, x]] > 0.5 {
                    covered += 1;
                    for c in 0..3 {
                        assert!(
                            (bundle.mesh_image[[y, x, c]] as f64 - SH_DC).abs() < 1e-6,
                            "pixel ({x},{y}) = {}",
                            bundle.mesh_image[[y, x, c]]
                        );
                    }
                }
            }
        }
        assert!(covered > 20);
    }

    #[test]
    fn neutral_shading_renders_mid_gray() {
        let (vs, tris) = flat_triangle_scene();
        let shading = ShadingParams::neutral(3);
        let bundle =
            rasterize(&vs, &unit_camera_params(), &shading, &tris, 16).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                if bundle.face_mask[[y, x]] > 0.5 {
                    for c in 0..3 {
                        assert!((bundle.mesh_image[[y, x, c]] - 0.5).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn full_head_renders_with_partition_invariants() {
        let rig = generate_rig(&RigSpec::default()).unwrap();
        let params = HeadParams::neutral(&rig);
        let vs = evaluate(&rig, &params).unwrap();
        let shading = ShadingParams::neutral(rig.n_vertices());
        let mut bundle = rasterize(&vs, &params, &shading, &rig.triangles, 64).unwrap();
        assert!(bundle.face_mask.iter().any(|&m| m > 0.5), "head not visible");

        let mut input = Array3::zeros((64, 64, 3));
        for (i, v) in input.iter_mut().enumerate() {
            *v = (i % 97) as f32 / 97.0;
        }
        bundle.set_background(&input).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let m = bundle.face_mask[[y, x]];
                for c in 0..3 {
                    // I_b is zero on the face; I_v is zero off the face.
                    if m > 0.5 {
                        assert_eq!(bundle.background[[y, x, c]], 0.0);
                    } else {
                        assert_eq!(bundle.mesh_image[[y, x, c]], 0.0);
                        assert_eq!(bundle.background[[y, x, c]], input[[y, x, c]]);
                    }
                }
            }
        }
    }

    #[test]
    fn mask_background_edge_cases() {
        let mut img = Array3::zeros((4, 4, 3));
        for (i, v) in img.iter_mut().enumerate() {
            *v = i as f32 / 48.0;
        }
        let full = Array2::from_elem((4, 4), 1.0);
        let empty = Array2::zeros((4, 4));
        assert!(mask_background(&img, &full)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(mask_background(&img, &empty).unwrap(), img);

        // Half-plane mask: pixel-exact match against a manual composite.
        let mut half = Array2::zeros((4, 4));
        for y in 0..4 {
            for x in 0..2 {
                half[[y, x]] = 1.0;
            }
        }
        let out = mask_background(&img, &half).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    let want = if x < 2 { 0.0 } else { img[[y, x, c]] };
                    assert_eq!(out[[y, x, c]], want);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_and_low_resolution_are_rejected() {
        let img = Array3::zeros((4, 4, 3));
        let mask = Array2::zeros((5, 4));
        assert!(matches!(
            mask_background(&img, &mask),
            Err(Error::Validation(_))
        ));
        let (vs, tris) = flat_triangle_scene();
        assert!(matches!(
            rasterize(
                &vs,
                &unit_camera_params(),
                &ShadingParams::neutral(3),
                &tris,
                8
            ),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn render_is_deterministic() {
        let rig = generate_rig(&RigSpec::default()).unwrap();
        let params = HeadParams::neutral(&rig);
        let vs = evaluate(&rig, &params).unwrap();
        let shading = ShadingParams::neutral(rig.n_vertices());
        let a = rasterize(&vs, &params, &shading, &rig.triangles, 64).unwrap();
        let b = rasterize(&vs, &params, &shading, &rig.triangles, 64).unwrap();
        assert_eq!(a.mesh_image, b.mesh_image);
    }
}
