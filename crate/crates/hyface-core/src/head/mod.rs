//! Linear-blendshape head model: shape/expression bases, one-joint jaw
//! articulation, global rotation, landmark anchoring and weak-perspective
//! projection.
//!
//! The vertex pipeline is
//!
//! ```text
//! blend:  x_i = template_i + B_shape*beta + B_expr*psi + B_eye*b
//! jaw:    y_i = (1 - w_i) * x_i + w_i * (R(theta_j) * (x_i - pivot) + pivot)
//! global: z_i = R(theta_h) * y_i
//! ```
//!
//! Head rotation is applied inside [`evaluate`]; [`project`] applies only the
//! weak-perspective scale and translation `p = s * z_xy + t`. This is the one
//! rotation convention used everywhere in the crate.

pub mod rig;
pub mod rotation;

mod io;

pub use io::{load_rig, rig_from_archive, rig_manifest, rig_tensors, save_rig};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use rotation::{mat_t_vec, mat_vec, rodrigues, rodrigues_jacobian};

/// Number of 2D/3D landmarks used across the pipeline.
pub const N_LANDMARKS: usize = 203;

/// A landmark anchored to a triangle by barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkAnchor {
    /// Index into the triangle list.
    pub tri: usize,
    /// Barycentric weights over the triangle's three vertices; sums to 1.
    pub bary: [f64; 3],
}

/// A head rig: template geometry, blendshape bases, jaw skinning weights and
/// landmark anchors. Construct with [`rig::generate_rig`] or [`load_rig`].
#[derive(Debug, Clone)]
pub struct HeadModelConfig {
    /// Template vertex positions, `(n_vertices, 3)`.
    pub template: Array2<f64>,
    /// Shape basis, `(3 * n_vertices, n_shape)`; column j is the flattened
    /// per-vertex displacement of shape coefficient j.
    pub b_shape: Array2<f64>,
    /// Expression basis, `(3 * n_vertices, n_expr)`.
    pub b_expr: Array2<f64>,
    /// Eye-closure basis, `(3 * n_vertices, 2)` — two extra expression-style
    /// columns (left/right lid).
    pub b_eye: Array2<f64>,
    /// Triangle list; indices into the vertex array.
    pub triangles: Vec<[usize; 3]>,
    /// Jaw rotation pivot in model space.
    pub jaw_pivot: [f64; 3],
    /// Per-vertex jaw skinning weight in `[0, 1]`.
    pub jaw_weights: Array1<f64>,
    /// Exactly [`N_LANDMARKS`] triangle/barycentric anchors.
    pub landmark_anchors: Vec<LandmarkAnchor>,
    /// Seed the rig was generated from (0 for hand-built rigs).
    pub seed: u64,
    /// Rig format/generator version string.
    pub version: String,
}

impl HeadModelConfig {
    pub fn n_vertices(&self) -> usize {
        self.template.nrows()
    }

    pub fn n_shape(&self) -> usize {
        self.b_shape.ncols()
    }

    pub fn n_expr(&self) -> usize {
        self.b_expr.ncols()
    }

    /// Length of the flattened parameter vector used by [`evaluate_flat`]:
    /// `[beta | psi | theta_j(3) | eye_b(2) | theta_h(3)]`.
    pub fn flat_param_len(&self) -> usize {
        self.n_shape() + self.n_expr() + 8
    }

    /// Check the structural invariants; returns a configuration error
    /// describing the first violation.
    pub fn validate(&self) -> Result<()> {
        let v = self.n_vertices();
        let rows = 3 * v;
        for (name, base, cols) in [
            ("b_shape", &self.b_shape, self.n_shape()),
            ("b_expr", &self.b_expr, self.n_expr()),
            ("b_eye", &self.b_eye, 2),
        ] {
            if base.dim() != (rows, cols) {
                return Err(Error::Config(format!(
                    "{name} must be ({rows}, {cols}), got {:?}",
                    base.dim()
                )));
            }
        }
        if self.jaw_weights.len() != v {
            return Err(Error::Config(format!(
                "jaw_weights length {} != n_vertices {v}",
                self.jaw_weights.len()
            )));
        }
        if self.jaw_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config("jaw_weights must lie in [0, 1]".into()));
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&ix| ix >= v) {
                return Err(Error::Config(format!(
                    "triangle {i} references vertex out of range: {t:?}"
                )));
            }
        }
        if self.landmark_anchors.len() != N_LANDMARKS {
            return Err(Error::Config(format!(
                "expected {N_LANDMARKS} landmark anchors, got {}",
                self.landmark_anchors.len()
            )));
        }
        for (i, a) in self.landmark_anchors.iter().enumerate() {
            if a.tri >= self.triangles.len() {
                return Err(Error::Config(format!(
                    "landmark anchor {i} references triangle {} out of range",
                    a.tri
                )));
            }
            let s: f64 = a.bary.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "landmark anchor {i} barycentric weights sum to {s}, not 1"
                )));
            }
        }
        Ok(())
    }
}

/// Instantiation parameters for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// Shape coefficients, length `n_shape`.
    pub beta: Array1<f64>,
    /// Expression coefficients, length `n_expr`.
    pub psi: Array1<f64>,
    /// Jaw rotation, axis-angle radians.
    pub theta_j: [f64; 3],
    /// Eye-closure blendshape weights (left, right).
    pub eye_b: [f64; 2],
    /// Global head rotation, axis-angle radians.
    pub theta_h: [f64; 3],
    /// Weak-perspective camera `(s, t_x, t_y)`; `s > 0`.
    pub cam_c: [f64; 3],
}

impl HeadParams {
    /// Neutral parameters (identity head, unit camera) for a given rig.
    pub fn neutral(config: &HeadModelConfig) -> Self {
        HeadParams {
            beta: Array1::zeros(config.n_shape()),
            psi: Array1::zeros(config.n_expr()),
            theta_j: [0.0; 3],
            eye_b: [0.0; 2],
            theta_h: [0.0; 3],
            cam_c: [1.0, 0.0, 0.0],
        }
    }

    /// Validate dimensions against a rig and finiteness of every entry.
    pub fn validate(&self, config: &HeadModelConfig) -> Result<()> {
        if self.beta.len() != config.n_shape() {
            return Err(Error::Config(format!(
                "beta length {} != n_shape {}",
                self.beta.len(),
                config.n_shape()
            )));
        }
        if self.psi.len() != config.n_expr() {
            return Err(Error::Config(format!(
                "psi length {} != n_expr {}",
                self.psi.len(),
                config.n_expr()
            )));
        }
        let finite = self.beta.iter().all(|x| x.is_finite())
            && self.psi.iter().all(|x| x.is_finite())
            && self.theta_j.iter().all(|x| x.is_finite())
            && self.eye_b.iter().all(|x| x.is_finite())
            && self.theta_h.iter().all(|x| x.is_finite())
            && self.cam_c.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Validation("non-finite head parameter".into()));
        }
        if self.cam_c[0] <= 0.0 {
            return Err(Error::Validation(format!(
                "camera scale must be positive, got {}",
                self.cam_c[0]
            )));
        }
        Ok(())
    }

    /// Flatten to the `[beta | psi | theta_j | eye_b | theta_h]` layout used
    /// by batched evaluation. The camera is intentionally not included: it
    /// acts in [`project`], not in [`evaluate`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.beta.len() + self.psi.len() + 8);
        out.extend(self.beta.iter());
        out.extend(self.psi.iter());
        out.extend_from_slice(&self.theta_j);
        out.extend_from_slice(&self.eye_b);
        out.extend_from_slice(&self.theta_h);
        out
    }

    /// Inverse of [`HeadParams::to_flat`]; the camera must be supplied.
    pub fn from_flat(config: &HeadModelConfig, flat: &[f64], cam_c: [f64; 3]) -> Result<Self> {
        if flat.len() != config.flat_param_len() {
            return Err(Error::Config(format!(
                "flat parameter length {} != expected {}",
                flat.len(),
                config.flat_param_len()
            )));
        }
        let (s, e) = (config.n_shape(), config.n_expr());
        Ok(HeadParams {
            beta: Array1::from_vec(flat[..s].to_vec()),
            psi: Array1::from_vec(flat[s..s + e].to_vec()),
            theta_j: [flat[s + e], flat[s + e + 1], flat[s + e + 2]],
            eye_b: [flat[s + e + 3], flat[s + e + 4]],
            theta_h: [flat[s + e + 5], flat[s + e + 6], flat[s + e + 7]],
            cam_c,
        })
    }
}

/// Evaluated head geometry.
#[derive(Debug, Clone)]
pub struct VertexSet {
    /// `(n_vertices, 3)` model-space positions (head rotation applied).
    pub positions: Array2<f64>,
    /// `(n_vertices, 3)` unit vertex normals, area-weighted from triangles.
    pub normals: Array2<f64>,
}

/// Evaluate the head model: blendshapes, jaw articulation, global rotation,
/// plus normals recomputed from the triangle list.
pub fn evaluate(config: &HeadModelConfig, params: &HeadParams) -> Result<VertexSet> {
    params.validate(config)?;
    let positions = evaluate_positions(config, params);
    let normals = vertex_normals(&positions, &config.triangles);
    Ok(VertexSet { positions, normals })
}

fn evaluate_positions(config: &HeadModelConfig, params: &HeadParams) -> Array2<f64> {
    let v = config.n_vertices();
    // Blend linearly in flattened (3V) space.
    let mut flat = Array1::zeros(3 * v);
    flat += &config.b_shape.dot(&params.beta);
    flat += &config.b_expr.dot(&params.psi);
    let eye = Array1::from_vec(params.eye_b.to_vec());
    flat += &config.b_eye.dot(&eye);

    let r_jaw = rodrigues(params.theta_j);
    let r_head = rodrigues(params.theta_h);
    let pivot = config.jaw_pivot;
    // Identity rotations skip their stage entirely: this keeps the neutral
    // pose bit-exact (no (x - pivot) + pivot round-trip rounding).
    let jaw_identity = params.theta_j == [0.0; 3];
    let head_identity = params.theta_h == [0.0; 3];

    let mut out = Array2::zeros((v, 3));
    for i in 0..v {
        let x = [
            config.template[[i, 0]] + flat[3 * i],
            config.template[[i, 1]] + flat[3 * i + 1],
            config.template[[i, 2]] + flat[3 * i + 2],
        ];
        let w = config.jaw_weights[i];
        let y = if w == 0.0 || jaw_identity {
            // Bit-identical passthrough for unskinned vertices.
            x
        } else {
            let d = [x[0] - pivot[0], x[1] - pivot[1], x[2] - pivot[2]];
            let rd = mat_vec(&r_jaw, d);
            [
                (1.0 - w) * x[0] + w * (rd[0] + pivot[0]),
                (1.0 - w) * x[1] + w * (rd[1] + pivot[1]),
                (1.0 - w) * x[2] + w * (rd[2] + pivot[2]),
            ]
        };
        let z = if head_identity { y } else { mat_vec(&r_head, y) };
        out[[i, 0]] = z[0];
        out[[i, 1]] = z[1];
        out[[i, 2]] = z[2];
    }
    out
}

/// Evaluate from a flat `[beta | psi | theta_j | eye_b | theta_h]` parameter
/// slice; used by batched training code. Returns `(n_vertices, 3)` positions
/// (no normals).
pub fn evaluate_flat(config: &HeadModelConfig, flat: &[f64]) -> Result<Array2<f64>> {
    let params = HeadParams::from_flat(config, flat, [1.0, 0.0, 0.0])?;
    params.validate(config)?;
    Ok(evaluate_positions(config, &params))
}

/// Vector-Jacobian product of [`evaluate_flat`]: given `d(loss)/d(positions)`
/// as a `(n_vertices, 3)` array, return `d(loss)/d(flat params)`.
pub fn evaluate_flat_vjp(
    config: &HeadModelConfig,
    flat: &[f64],
    grad_positions: &Array2<f64>,
) -> Result<Vec<f64>> {
    let params = HeadParams::from_flat(config, flat, [1.0, 0.0, 0.0])?;
    params.validate(config)?;
    let v = config.n_vertices();
    if grad_positions.dim() != (v, 3) {
        return Err(Error::Config(format!(
            "grad_positions must be ({v}, 3), got {:?}",
            grad_positions.dim()
        )));
    }

    let r_jaw = rodrigues(params.theta_j);
    let r_head = rodrigues(params.theta_h);
    let d_jaw = rodrigues_jacobian(params.theta_j);
    let d_head = rodrigues_jacobian(params.theta_h);
    let pivot = config.jaw_pivot;

    // Recompute the pre-rotation blend x and jaw output y per vertex.
    let mut flat_blend = Array1::zeros(3 * v);
    flat_blend += &config.b_shape.dot(&params.beta);
    flat_blend += &config.b_expr.dot(&params.psi);
    let eye = Array1::from_vec(params.eye_b.to_vec());
    flat_blend += &config.b_eye.dot(&eye);

    let mut grad_blend = Array1::zeros(3 * v);
    let mut g_theta_j = [0.0; 3];
    let mut g_theta_h = [0.0; 3];

    for i in 0..v {
        let x = [
            config.template[[i, 0]] + flat_blend[3 * i],
            config.template[[i, 1]] + flat_blend[3 * i + 1],
            config.template[[i, 2]] + flat_blend[3 * i + 2],
        ];
        let w = config.jaw_weights[i];
        let d = [x[0] - pivot[0], x[1] - pivot[1], x[2] - pivot[2]];
        let rd = mat_vec(&r_jaw, d);
        let y = [
            (1.0 - w) * x[0] + w * (rd[0] + pivot[0]),
            (1.0 - w) * x[1] + w * (rd[1] + pivot[1]),
            (1.0 - w) * x[2] + w * (rd[2] + pivot[2]),
        ];
        let g_z = [
            grad_positions[[i, 0]],
            grad_positions[[i, 1]],
            grad_positions[[i, 2]],
        ];
        // theta_h picks up g_z . (dR_h/dtheta_k y).
        for k in 0..3 {
            g_theta_h[k] += rotation::dot(g_z, mat_vec(&d_head[k], y));
        }
        let g_y = mat_t_vec(&r_head, g_z);
        // theta_j picks up w * g_y . (dR_j/dtheta_k (x - pivot)).
        for k in 0..3 {
            g_theta_j[k] += w * rotation::dot(g_y, mat_vec(&d_jaw[k], d));
        }
        // d y / d x = (1 - w) I + w R_j.
        let g_x_rot = mat_t_vec(&r_jaw, g_y);
        for c in 0..3 {
            grad_blend[3 * i + c] = (1.0 - w) * g_y[c] + w * g_x_rot[c];
        }
    }

    let g_beta = config.b_shape.t().dot(&grad_blend);
    let g_psi = config.b_expr.t().dot(&grad_blend);
    let g_eye = config.b_eye.t().dot(&grad_blend);

    let mut out = Vec::with_capacity(config.flat_param_len());
    out.extend(g_beta.iter());
    out.extend(g_psi.iter());
    out.extend_from_slice(&g_theta_j);
    out.extend_from_slice(&g_eye.to_vec());
    out.extend_from_slice(&g_theta_h);
    Ok(out)
}

/// Analytic Jacobian of vertex positions w.r.t. expression coefficients:
/// `(3 * n_vertices, n_expr)`, rows in `(vertex, xyz)` flattening order.
pub fn jacobian_psi(config: &HeadModelConfig, params: &HeadParams) -> Result<Array2<f64>> {
    params.validate(config)?;
    let v = config.n_vertices();
    let r_jaw = rodrigues(params.theta_j);
    let r_head = rodrigues(params.theta_h);
    let mut jac = Array2::zeros((3 * v, config.n_expr()));
    for j in 0..config.n_expr() {
        for i in 0..v {
            let col = [
                config.b_expr[[3 * i, j]],
                config.b_expr[[3 * i + 1, j]],
                config.b_expr[[3 * i + 2, j]],
            ];
            // d z / d x = R_h ((1 - w) I + w R_j), applied to the basis column.
            let w = config.jaw_weights[i];
            let rj = mat_vec(&r_jaw, col);
            let mixed = [
                (1.0 - w) * col[0] + w * rj[0],
                (1.0 - w) * col[1] + w * rj[1],
                (1.0 - w) * col[2] + w * rj[2],
            ];
            let z = mat_vec(&r_head, mixed);
            jac[[3 * i, j]] = z[0];
            jac[[3 * i + 1, j]] = z[1];
            jac[[3 * i + 2, j]] = z[2];
        }
    }
    Ok(jac)
}

/// Weak-perspective projection `p = s * z_xy + (t_x, t_y)` into NDC.
/// Head rotation is already part of the vertex positions (see module docs).
pub fn project(vertices: &VertexSet, params: &HeadParams) -> Result<Array2<f64>> {
    project_points(&vertices.positions, params)
}

/// [`project`] on a bare `(n, >=2)` point array (vertices or landmarks).
pub fn project_points(points: &Array2<f64>, params: &HeadParams) -> Result<Array2<f64>> {
    let [s, tx, ty] = params.cam_c;
    if !(s.is_finite() && tx.is_finite() && ty.is_finite()) {
        return Err(Error::Validation("non-finite camera parameters".into()));
    }
    if s <= 0.0 {
        return Err(Error::Validation(format!(
            "camera scale must be positive, got {s}"
        )));
    }
    if points.ncols() < 2 {
        return Err(Error::Validation(format!(
            "projection needs at least 2 coordinate columns, got {}",
            points.ncols()
        )));
    }
    let v = points.nrows();
    let mut out = Array2::zeros((v, 2));
    for i in 0..v {
        out[[i, 0]] = s * points[[i, 0]] + tx;
        out[[i, 1]] = s * points[[i, 1]] + ty;
    }
    Ok(out)
}

/// Barycentric landmark selection: `(N_LANDMARKS, 3)` model-space points.
pub fn select_landmarks(config: &HeadModelConfig, vertices: &VertexSet) -> Result<Array2<f64>> {
    if config.landmark_anchors.len() != N_LANDMARKS {
        return Err(Error::Config(format!(
            "rig has {} landmark anchors, expected {N_LANDMARKS}",
            config.landmark_anchors.len()
        )));
    }
    let mut out = Array2::zeros((N_LANDMARKS, 3));
    for (li, anchor) in config.landmark_anchors.iter().enumerate() {
        let t = config
            .triangles
            .get(anchor.tri)
            .ok_or_else(|| Error::Config(format!("anchor {li} triangle out of range")))?;
        for c in 0..3 {
            out[[li, c]] = anchor.bary[0] * vertices.positions[[t[0], c]]
                + anchor.bary[1] * vertices.positions[[t[1], c]]
                + anchor.bary[2] * vertices.positions[[t[2], c]];
        }
    }
    Ok(out)
}

/// Dense landmark selection matrix `A` with `landmarks = A * positions`,
/// shape `(N_LANDMARKS, n_vertices)`. Used to keep landmark selection inside
/// autodiff graphs as a plain matrix product.
pub fn landmark_matrix(config: &HeadModelConfig) -> Result<Array2<f64>> {
    if config.landmark_anchors.len() != N_LANDMARKS {
        return Err(Error::Config(format!(
            "rig has {} landmark anchors, expected {N_LANDMARKS}",
            config.landmark_anchors.len()
        )));
    }
    let mut a = Array2::zeros((N_LANDMARKS, config.n_vertices()));
    for (li, anchor) in config.landmark_anchors.iter().enumerate() {
        let t = config
            .triangles
            .get(anchor.tri)
            .ok_or_else(|| Error::Config(format!("anchor {li} triangle out of range")))?;
        for k in 0..3 {
            a[[li, t[k]]] += anchor.bary[k];
        }
    }
    Ok(a)
}

/// Area-weighted vertex normals; degenerate vertices fall back to `+z`.
pub fn vertex_normals(positions: &Array2<f64>, triangles: &[[usize; 3]]) -> Array2<f64> {
    let v = positions.nrows();
    let mut acc = Array2::<f64>::zeros((v, 3));
    for t in triangles {
        let p = |i: usize| [positions[[i, 0]], positions[[i, 1]], positions[[i, 2]]];
        let (a, b, c) = (p(t[0]), p(t[1]), p(t[2]));
        let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = rotation::cross(ab, ac); // magnitude = 2x area
        for &vi in t {
            for k in 0..3 {
                acc[[vi, k]] += n[k];
            }
        }
    }
    for i in 0..v {
        let n = [acc[[i, 0]], acc[[i, 1]], acc[[i, 2]]];
        let len = rotation::dot(n, n).sqrt();
        if len < 1e-12 {
            acc[[i, 0]] = 0.0;
            acc[[i, 1]] = 0.0;
            acc[[i, 2]] = 1.0;
        } else {
            for k in 0..3 {
                acc[[i, k]] /= len;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rig::{generate_rig, toy_rig, RigSpec};

    fn small_rig() -> HeadModelConfig {
        generate_rig(&RigSpec {
            subdivisions: 1,
            n_shape: 4,
            n_expr: 5,
            seed: 11,
            ..RigSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_params_reproduce_template_exactly() {
        let rig = small_rig();
        let out = evaluate(&rig, &HeadParams::neutral(&rig)).unwrap();
        assert_eq!(out.positions, rig.template);
    }

    #[test]
    fn unit_beta_adds_first_basis_column() {
        let rig = small_rig();
        let mut params = HeadParams::neutral(&rig);
        params.beta[0] = 1.0;
        let out = evaluate(&rig, &params).unwrap();
        for i in 0..rig.n_vertices() {
            for c in 0..3 {
                let want = rig.template[[i, c]] + rig.b_shape[[3 * i + c, 0]];
                assert!((out.positions[[i, c]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_dense_matrix_oracle() {
        // Independent oracle: accumulate every basis entry with plain loops,
        // no ndarray dot products, no jaw/rotation shortcuts.
        let rig = small_rig();
        let mut params = HeadParams::neutral(&rig);
        let mut rng = 2654435769u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for b in params.beta.iter_mut() {
            *b = next();
        }
        for p in params.psi.iter_mut() {
            *p = next();
        }
        let out = evaluate(&rig, &params).unwrap();

        for i in 0..rig.n_vertices() {
            for c in 0..3 {
                let mut want = rig.template[[i, c]];
                for j in 0..rig.n_shape() {
                    want += rig.b_shape[[3 * i + c, j]] * params.beta[j];
                }
                for j in 0..rig.n_expr() {
                    want += rig.b_expr[[3 * i + c, j]] * params.psi[j];
                }
                assert!(
                    (out.positions[[i, c]] - want).abs() < 1e-6,
                    "vertex {i} coord {c}"
                );
            }
        }
    }

    #[test]
    fn blend_is_additive_in_beta() {
        let rig = small_rig();
        let mut p1 = HeadParams::neutral(&rig);
        let mut p2 = HeadParams::neutral(&rig);
        let mut p12 = HeadParams::neutral(&rig);
        p1.beta[0] = 0.7;
        p2.beta[2] = -0.4;
        p12.beta[0] = 0.7;
        p12.beta[2] = -0.4;
        let d1 = &evaluate(&rig, &p1).unwrap().positions - &rig.template;
        let d2 = &evaluate(&rig, &p2).unwrap().positions - &rig.template;
        let d12 = &evaluate(&rig, &p12).unwrap().positions - &rig.template;
        let err = (&d12 - &(&d1 + &d2)).iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let rig = small_rig();
        let mut params = HeadParams::neutral(&rig);
        params.psi[1] = 0.5;
        let base = evaluate(&rig, &params).unwrap();
        params.theta_h = [0.4, -1.1, 0.3];
        let rot = evaluate(&rig, &params).unwrap();
        for i in (0..rig.n_vertices()).step_by(7) {
            for j in (i + 1..rig.n_vertices()).step_by(13) {
                let d = |vs: &VertexSet| {
                    let mut s = 0.0;
                    for c in 0..3 {
                        let diff = vs.positions[[i, c]] - vs.positions[[j, c]];
                        s += diff * diff;
                    }
                    s.sqrt()
                };
                assert!((d(&base) - d(&rot)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn jaw_leaves_unweighted_vertices_bit_identical() {
        let rig = small_rig();
        let neutral = evaluate(&rig, &HeadParams::neutral(&rig)).unwrap();
        let mut params = HeadParams::neutral(&rig);
        params.theta_j = [0.3, -0.2, 0.15];
        let open = evaluate(&rig, &params).unwrap();
        let mut checked = 0;
        for i in 0..rig.n_vertices() {
            if rig.jaw_weights[i] == 0.0 {
                for c in 0..3 {
                    assert_eq!(open.positions[[i, c]], neutral.positions[[i, c]]);
                }
                checked += 1;
            }
        }
        assert!(checked > 0, "rig needs some zero-weight vertices");
    }

    #[test]
    fn ninety_degree_yaw_zeroes_x_of_unit_x_vertex() {
        // R_y(pi/2) maps (1,0,0) to (0,0,-1); its projected x is 0.
        let rig = toy_rig(20, 2, 3, 5);
        let mut cfg = rig.clone();
        cfg.template[[0, 0]] = 1.0;
        cfg.template[[0, 1]] = 0.0;
        cfg.template[[0, 2]] = 0.0;
        let mut params = HeadParams::neutral(&cfg);
        params.theta_h = [0.0, std::f64::consts::FRAC_PI_2, 0.0];
        let out = evaluate(&cfg, &params).unwrap();
        assert!(out.positions[[0, 0]].abs() < 1e-12);
        assert!((out.positions[[0, 2]] + 1.0).abs() < 1e-12);
        let proj = project(&out, &params).unwrap();
        assert!(proj[[0, 0]].abs() < 1e-12);
    }

    #[test]
    fn projection_identity_scale_passes_xy_through() {
        let rig = small_rig();
        let out = evaluate(&rig, &HeadParams::neutral(&rig)).unwrap();
        let proj = project(&out, &HeadParams::neutral(&rig)).unwrap();
        for i in 0..rig.n_vertices() {
            assert_eq!(proj[[i, 0]], out.positions[[i, 0]]);
            assert_eq!(proj[[i, 1]], out.positions[[i, 1]]);
        }
    }

    #[test]
    fn projection_scale_is_linear_and_translation_commutes() {
        let rig = small_rig();
        let vs = evaluate(&rig, &HeadParams::neutral(&rig)).unwrap();
        let mut p1 = HeadParams::neutral(&rig);
        p1.cam_c = [1.0, 0.0, 0.0];
        let mut p2 = p1.clone();
        p2.cam_c = [2.0, 0.0, 0.0];
        let a = project(&vs, &p1).unwrap();
        let b = project(&vs, &p2).unwrap();
        for i in 0..rig.n_vertices() {
            assert!((b[[i, 0]] - 2.0 * a[[i, 0]]).abs() < 1e-12);
            assert!((b[[i, 1]] - 2.0 * a[[i, 1]]).abs() < 1e-12);
        }
        let mut p3 = p1.clone();
        p3.cam_c = [1.0, 0.25, -0.5];
        let c = project(&vs, &p3).unwrap();
        for i in 0..rig.n_vertices() {
            assert!((c[[i, 0]] - (a[[i, 0]] + 0.25)).abs() < 1e-12);
            assert!((c[[i, 1]] - (a[[i, 1]] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        let rig = small_rig();
        let vs = evaluate(&rig, &HeadParams::neutral(&rig)).unwrap();
        let mut params = HeadParams::neutral(&rig);
        params.cam_c = [0.0, 0.0, 0.0];
        assert!(matches!(
            project(&vs, &params),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let rig = small_rig();
        let mut params = HeadParams::neutral(&rig);
        params.beta = Array1::zeros(rig.n_shape() + 1);
        assert!(matches!(evaluate(&rig, &params), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_params_are_validation_error() {
        let rig = small_rig();
        let mut params = HeadParams::neutral(&rig);
        params.theta_h[0] = f64::NAN;
        assert!(matches!(evaluate(&rig, &params), Err(Error::Validation(_))));
    }

    #[test]
    fn vertex_anchor_equals_vertex_and_centroid_anchor_equals_centroid() {
        let rig = small_rig();
        let vs = evaluate(&rig, &HeadParams::neutral(&rig)).unwrap();
        let mut cfg = rig.clone();
        cfg.landmark_anchors[0] = LandmarkAnchor {
            tri: 3,
            bary: [1.0, 0.0, 0.0],
        };
        cfg.landmark_anchors[1] = LandmarkAnchor {
            tri: 3,
            bary: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        };
        let lms = select_landmarks(&cfg, &vs).unwrap();
        let t = cfg.triangles[3];
        for c in 0..3 {
            assert_eq!(lms[[0, c]], vs.positions[[t[0], c]]);
            let centroid = (vs.positions[[t[0], c]]
                + vs.positions[[t[1], c]]
                + vs.positions[[t[2], c]])
                / 3.0;
            assert!((lms[[1, c]] - centroid).abs() < 1e-12);
        }
    }

    #[test]
    fn landmarks_match_direct_barycentric_oracle_on_template() {
        let rig = small_rig();
        let vs = evaluate(&rig, &HeadParams::neutral(&rig)).unwrap();
        let lms = select_landmarks(&rig, &vs).unwrap();
        assert_eq!(lms.nrows(), N_LANDMARKS);
        for (li, a) in rig.landmark_anchors.iter().enumerate() {
            let t = rig.triangles[a.tri];
            for c in 0..3 {
                let want = a.bary[0] * rig.template[[t[0], c]]
                    + a.bary[1] * rig.template[[t[1], c]]
                    + a.bary[2] * rig.template[[t[2], c]];
                assert!((lms[[li, c]] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn landmark_matrix_agrees_with_select_landmarks() {
        let rig = small_rig();
        let mut params = HeadParams::neutral(&rig);
        params.psi[0] = 0.6;
        params.theta_h = [0.1, 0.3, -0.2];
        let vs = evaluate(&rig, &params).unwrap();
        let direct = select_landmarks(&rig, &vs).unwrap();
        let a = landmark_matrix(&rig).unwrap();
        let via_matrix = a.dot(&vs.positions);
        let err = (&direct - &via_matrix)
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn psi_jacobian_matches_central_differences() {
        let rig = toy_rig(20, 3, 4, 9);
        let mut params = HeadParams::neutral(&rig);
        params.psi = Array1::from_vec(vec![0.3, -0.5, 0.2, 0.8]);
        params.theta_j = [0.2, 0.1, -0.3];
        params.theta_h = [0.5, -0.2, 0.4];
        let jac = jacobian_psi(&rig, &params).unwrap();

        let h = 1e-4;
        let mut fd = Array2::zeros(jac.dim());
        for j in 0..rig.n_expr() {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp.psi[j] += h;
            pm.psi[j] -= h;
            let vp = evaluate(&rig, &pp).unwrap().positions;
            let vm = evaluate(&rig, &pm).unwrap().positions;
            for i in 0..rig.n_vertices() {
                for c in 0..3 {
                    fd[[3 * i + c, j]] = (vp[[i, c]] - vm[[i, c]]) / (2.0 * h);
                }
            }
        }
        let num = (&jac - &fd).iter().map(|x| x * x).sum::<f64>().sqrt();
        let den = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(den > 0.0);
        assert!(num / den < 1e-3, "relative error {}", num / den);
    }

    #[test]
    fn projected_theta_h_jacobian_matches_central_differences() {
        let rig = toy_rig(20, 3, 4, 9);
        let mut params = HeadParams::neutral(&rig);
        params.theta_h = [0.3, -0.6, 0.2];
        params.cam_c = [1.4, 0.1, -0.2];

        let h = 1e-4;
        // Analytic: d p_i / d theta_k = s * (dR/dtheta_k * y_i)_xy, with y the
        // pre-rotation geometry.
        let mut pre = params.clone();
        pre.theta_h = [0.0; 3];
        let y = evaluate(&rig, &pre).unwrap().positions;
        let d_head = rodrigues_jacobian(params.theta_h);
        for k in 0..3 {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp.theta_h[k] += h;
            pm.theta_h[k] -= h;
            let prj_p = project(&evaluate(&rig, &pp).unwrap(), &pp).unwrap();
            let prj_m = project(&evaluate(&rig, &pm).unwrap(), &pm).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..rig.n_vertices() {
                let yi = [y[[i, 0]], y[[i, 1]], y[[i, 2]]];
                let dz = mat_vec(&d_head[k], yi);
                for c in 0..2 {
                    let analytic = params.cam_c[0] * dz[c];
                    let fd = (prj_p[[i, c]] - prj_m[[i, c]]) / (2.0 * h);
                    num += (analytic - fd) * (analytic - fd);
                    den += fd * fd;
                }
            }
            assert!(den > 0.0);
            assert!((num / den).sqrt() < 1e-3);
        }
    }

    #[test]
    fn vjp_matches_finite_differences_of_weighted_sum() {
        // f(params) = sum(positions * G) for fixed G; grad f = vjp(G).
        let rig = toy_rig(20, 3, 4, 21);
        let mut flat = vec![0.0; rig.flat_param_len()];
        for (i, x) in flat.iter_mut().enumerate() {
            *x = ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5;
        }
        let mut g = Array2::zeros((rig.n_vertices(), 3));
        for (i, x) in g.iter_mut().enumerate() {
            *x = ((i * 40503) % 997) as f64 / 997.0 - 0.5;
        }
        let grad = evaluate_flat_vjp(&rig, &flat, &g).unwrap();

        let f = |p: &[f64]| -> f64 {
            let pos = evaluate_flat(&rig, p).unwrap();
            pos.iter().zip(g.iter()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for k in 0..flat.len() {
            let mut fp = flat.clone();
            let mut fm = flat.clone();
            fp[k] += h;
            fm[k] -= h;
            let fd = (f(&fp) - f(&fm)) / (2.0 * h);
            assert!(
                (grad[k] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "param {k}: analytic {} vs fd {fd}",
                grad[k]
            );
        }
    }

    #[test]
    fn flat_round_trip_preserves_params() {
        let rig = small_rig();
        let mut params = HeadParams::neutral(&rig);
        params.beta[1] = 0.4;
        params.psi[2] = -0.9;
        params.theta_j = [0.1, 0.2, 0.3];
        params.eye_b = [0.5, -0.25];
        params.theta_h = [-0.4, 0.8, 0.05];
        let flat = params.to_flat();
        let back = HeadParams::from_flat(&rig, &flat, params.cam_c).unwrap();
        assert_eq!(params, back);
    }
}
