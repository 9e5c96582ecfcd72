//! Real spherical harmonics (order 2, 9 bands) and Lambertian vertex shading.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Band-0 basis constant (1 / (2 sqrt(pi))).
pub const SH_DC: f64 = 0.282095;

/// Evaluate the 9 real SH basis functions at a unit direction.
/// Band order: `[Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22]`.
pub fn sh_basis(n: [f64; 3]) -> [f64; 9] {
    let [x, y, z] = n;
    [
        SH_DC,
        0.488603 * y,
        0.488603 * z,
        0.488603 * x,
        1.092548 * x * y,
        1.092548 * y * z,
        0.315392 * (3.0 * z * z - 1.0),
        1.092548 * x * z,
        0.546274 * (x * x - y * y),
    ]
}

/// DC-only lighting `(9, 3)` normalized so that flat-lit albedo renders
/// unchanged: `l[0] = 1 / Y00` per channel, all other bands zero.
pub fn dc_only_lighting() -> Array2<f64> {
    let mut l = Array2::zeros((9, 3));
    for c in 0..3 {
        l[[0, c]] = 1.0 / SH_DC;
    }
    l
}

/// Per-vertex Lambertian shading: `color = albedo * sum_k l_k Y_k(normal)`,
/// clamped to `[0, 1]`.
pub fn shade_sh(
    normals: &Array2<f64>,
    albedo: &Array2<f64>,
    sh_coeffs: &Array2<f64>,
) -> Result<Array2<f64>> {
    let v = normals.nrows();
    if normals.dim() != (v, 3) || albedo.dim() != (v, 3) {
        return Err(Error::Validation(format!(
            "shade_sh: normals {:?} and albedo {:?} must both be (V, 3)",
            normals.dim(),
            albedo.dim()
        )));
    }
    if sh_coeffs.dim() != (9, 3) {
        return Err(Error::Validation(format!(
            "shade_sh: sh_coeffs must be (9, 3), got {:?}",
            sh_coeffs.dim()
        )));
    }
    let mut out = Array2::zeros((v, 3));
    for i in 0..v {
        let basis = sh_basis([normals[[i, 0]], normals[[i, 1]], normals[[i, 2]]]);
        for c in 0..3 {
            let mut irr = 0.0;
            for k in 0..9 {
                irr += sh_coeffs[[k, c]] * basis[k];
            }
            out[[i, c]] = (albedo[[i, c]] * irr).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
