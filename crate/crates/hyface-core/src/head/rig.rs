//! Procedural head rig generation.
//!
//! The rig is a deformed icosphere with smoothed, orthonormalized random
//! blendshape bases, a one-joint jaw weight field, and 203 landmark anchors
//! ray-cast from a fixed canonical direction table. Everything is
//! deterministic in the seed; full-size configurations (e.g. 300 shape / 50
//! expression coefficients) are valid as long as `3 * n_vertices` is at
//! least the total basis column count.

use std::collections::HashMap;
use std::ops::Range;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{HeadModelConfig, LandmarkAnchor, N_LANDMARKS};

/// Landmark index groups in the canonical 203-point layout.
pub const GROUP_JAWLINE: Range<usize> = 0..33;
pub const GROUP_BROWS: Range<usize> = 33..51;
pub const GROUP_NOSE: Range<usize> = 51..66;
pub const GROUP_EYE_LEFT: Range<usize> = 66..86;
pub const GROUP_EYE_RIGHT: Range<usize> = 86..106;
pub const GROUP_MOUTH: Range<usize> = 106..146;
pub const GROUP_EXTRA: Range<usize> = 146..203;

/// Rig generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSpec {
    /// Icosphere subdivision level: 0 -> 12 vertices, 1 -> 42, 2 -> 162,
    /// 3 -> 642.
    pub subdivisions: u32,
    pub n_shape: usize,
    pub n_expr: usize,
    pub seed: u64,
    /// Amplitude applied to the orthonormalized shape basis columns.
    pub shape_amp: f64,
    /// Amplitude applied to the orthonormalized expression basis columns.
    pub expr_amp: f64,
    /// Amplitude applied to the two eye-closure columns.
    pub eye_amp: f64,
    /// Laplacian smoothing iterations applied to the raw random fields
    /// before orthonormalization (keeps deformations spatially coherent).
    pub smooth_iters: usize,
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec {
            subdivisions: 2,
            n_shape: 8,
            n_expr: 8,
            seed: 7,
            shape_amp: 0.5,
            expr_amp: 1.0,
            eye_amp: 0.4,
            smooth_iters: 6,
        }
    }
}

/// Head half-extents applied to the unit icosphere: (width, height, depth).
const HEAD_SCALE: [f64; 3] = [0.52, 0.65, 0.55];

/// Generate a deterministic head rig from a [`RigSpec`].
pub fn generate_rig(spec: &RigSpec) -> Result<HeadModelConfig> {
    let (unit_verts, triangles) = icosphere(spec.subdivisions);
    let v = unit_verts.len();
    let n_basis = spec.n_shape + spec.n_expr + 2;
    if n_basis > 3 * v {
        return Err(Error::Config(format!(
            "rig needs {} basis columns but only 3 x {v} dimensions exist",
            n_basis
        )));
    }

    let mut template = Array2::zeros((v, 3));
    for (i, u) in unit_verts.iter().enumerate() {
        for c in 0..3 {
            template[[i, c]] = u[c] * HEAD_SCALE[c];
        }
    }

    // Random displacement fields, smoothed over the mesh for spatial
    // coherence, then jointly orthonormalized so shape/expression/eye
    // columns are mutually independent directions.
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let neighbors = vertex_neighbors(v, &triangles);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n_basis);
    for _ in 0..n_basis {
        let mut field: Vec<[f64; 3]> = (0..v)
            .map(|_| {
                [
                    gaussian(&mut rng),
                    gaussian(&mut rng),
                    gaussian(&mut rng),
                ]
            })
            .collect();
        for _ in 0..spec.smooth_iters {
            field = smooth_field(&field, &neighbors);
        }
        let mut col = Vec::with_capacity(3 * v);
        for f in &field {
            col.extend_from_slice(f);
        }
        columns.push(col);
    }
    orthonormalize(&mut columns)?;

    let mut b_shape = Array2::zeros((3 * v, spec.n_shape));
    let mut b_expr = Array2::zeros((3 * v, spec.n_expr));
    let mut b_eye = Array2::zeros((3 * v, 2));
    for (j, col) in columns.iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            if j < spec.n_shape {
                b_shape[[r, j]] = x * spec.shape_amp;
            } else if j < spec.n_shape + spec.n_expr {
                b_expr[[r, j - spec.n_shape]] = x * spec.expr_amp;
            } else {
                b_eye[[r, j - spec.n_shape - spec.n_expr]] = x * spec.eye_amp;
            }
        }
    }

    let jaw_weights = jaw_weight_field(&template);
    let landmark_anchors = anchor_landmarks(&template, &triangles)?;

    let cfg = HeadModelConfig {
        template,
        b_shape,
        b_expr,
        b_eye,
        triangles,
        jaw_pivot: [0.0, -0.08, -0.15],
        jaw_weights,
        landmark_anchors,
        seed: spec.seed,
        version: "hyface-rig-1".into(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Minimal rig for gradient tests: `n` vertices on a Fibonacci sphere of
/// radius 0.5, strip triangulation, cycling landmark anchors, and a linear
/// jaw-weight ramp. Geometry is not meant to look like anything.
pub fn toy_rig(n_vertices: usize, n_shape: usize, n_expr: usize, seed: u64) -> HeadModelConfig {
    assert!(n_vertices >= 4, "toy rig needs at least 4 vertices");
    let mut template = Array2::zeros((n_vertices, 3));
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    for i in 0..n_vertices {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n_vertices as f64;
        let r = (1.0 - y * y).sqrt();
        let a = golden * i as f64;
        template[[i, 0]] = 0.5 * r * a.cos();
        template[[i, 1]] = 0.5 * y;
        template[[i, 2]] = 0.5 * r * a.sin();
    }
    let triangles: Vec<[usize; 3]> = (0..n_vertices - 2).map(|i| [i, i + 1, i + 2]).collect();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<f64>> = (0..n_shape + n_expr + 2)
        .map(|_| (0..3 * n_vertices).map(|_| gaussian(&mut rng)).collect())
        .collect();
    orthonormalize(&mut columns).expect("toy rig basis");
    let mut b_shape = Array2::zeros((3 * n_vertices, n_shape));
    let mut b_expr = Array2::zeros((3 * n_vertices, n_expr));
    let mut b_eye = Array2::zeros((3 * n_vertices, 2));
    for (j, col) in columns.iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            if j < n_shape {
                b_shape[[r, j]] = x;
            } else if j < n_shape + n_expr {
                b_expr[[r, j - n_shape]] = x;
            } else {
                b_eye[[r, j - n_shape - n_expr]] = x;
            }
        }
    }

    let jaw_weights =
        Array1::from_shape_fn(n_vertices, |i| i as f64 / (n_vertices - 1) as f64);
    let landmark_anchors = (0..N_LANDMARKS)
        .map(|i| LandmarkAnchor {
            tri: i % triangles.len(),
            bary: [0.5, 0.3, 0.2],
        })
        .collect();

    HeadModelConfig {
        template,
        b_shape,
        b_expr,
        b_eye,
        triangles,
        jaw_pivot: [0.0, -0.1, 0.0],
        jaw_weights,
        landmark_anchors,
        seed,
        version: "hyface-rig-toy-1".into(),
    }
}

/// Canonical landmark directions as (azimuth, elevation) in degrees.
/// Azimuth is the rotation about +y (positive toward +x, the subject's
/// screen-right side); elevation is positive upward; (0, 0) looks along +z
/// (out of the face). The table is fixed: pose masks and albedo features are
/// derived from it and must not drift with the rig seed.
pub fn canonical_landmark_spherical() -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(N_LANDMARKS);
    // Jawline: ear-to-ear arc dipping under the chin.
    for k in 0..33 {
        let t = k as f64 / 32.0;
        let u = 2.0 * t - 1.0;
        pts.push((
            -75.0 + 150.0 * t,
            -20.0 - 42.0 * (u * std::f64::consts::FRAC_PI_2).cos(),
        ));
    }
    // Brows: two 9-point arcs.
    for k in 0..9 {
        let t = k as f64 / 8.0;
        pts.push((-50.0 + 40.0 * t, 24.0 + 8.0 * (std::f64::consts::PI * t).sin()));
    }
    for k in 0..9 {
        let t = k as f64 / 8.0;
        pts.push((
            10.0 + 40.0 * t,
            24.0 + 8.0 * (std::f64::consts::PI * (1.0 - t)).sin(),
        ));
    }
    // Nose: 6 bridge points + 9 base points.
    for k in 0..6 {
        pts.push((0.0, 22.0 - 5.2 * k as f64));
    }
    for k in 0..9 {
        let c = ((k as f64 - 4.0) / 4.0 * std::f64::consts::FRAC_PI_2).cos();
        pts.push((-12.0 + 3.0 * k as f64, -8.0 + 3.0 * c));
    }
    // Eye rings: 20 points each.
    for center in [-20.0, 20.0] {
        for k in 0..20 {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 20.0;
            pts.push((center + 8.0 * a.cos(), 12.0 + 4.5 * a.sin()));
        }
    }
    // Mouth: 24-point outer ring + 16-point inner ring.
    for k in 0..24 {
        let a = 2.0 * std::f64::consts::PI * k as f64 / 24.0;
        pts.push((14.0 * a.cos(), -28.0 + 7.0 * a.sin()));
    }
    for k in 0..16 {
        let a = 2.0 * std::f64::consts::PI * k as f64 / 16.0;
        pts.push((8.0 * a.cos(), -28.0 + 3.5 * a.sin()));
    }
    // Cheek/forehead coverage: golden-ratio scatter over the front.
    for k in 0..57 {
        let fa = (k as f64 * 0.618_033_988_7 + 0.17).fract();
        let fe = (k as f64 * 0.381_966_011_3 + 0.31).fract();
        pts.push((-55.0 + 110.0 * fa, -45.0 + 85.0 * fe));
    }
    debug_assert_eq!(pts.len(), N_LANDMARKS);
    pts
}

/// Unit direction for an (azimuth, elevation) pair in degrees.
pub fn spherical_to_dir(az_deg: f64, el_deg: f64) -> [f64; 3] {
    let az = az_deg.to_radians();
    let el = el_deg.to_radians();
    [az.sin() * el.cos(), el.sin(), az.cos() * el.cos()]
}

/// Index lists for the yaw-dependent landmark masks: `(front, left, right)`.
/// Front keeps everything; the left/right masks drop points whose canonical
/// azimuth rotates away from the camera past the grazing threshold.
pub fn pose_mask_index_lists() -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let sph = canonical_landmark_spherical();
    let front: Vec<usize> = (0..N_LANDMARKS).collect();
    let left = (0..N_LANDMARKS)
        .filter(|&i| sph[i].0 >= -35.0)
        .collect();
    let right = (0..N_LANDMARKS)
        .filter(|&i| sph[i].0 <= 35.0)
        .collect();
    (front, left, right)
}

/// Paint a feature-aware per-vertex albedo: `skin` base color, darkened
/// rings around eyes and brows, lips tinted toward `lip`. Feature centers
/// come from the rig's template landmarks, so painted features track the
/// geometry they belong to.
pub fn paint_feature_albedo(
    cfg: &HeadModelConfig,
    skin: [f64; 3],
    lip: [f64; 3],
    strength: f64,
) -> Array2<f64> {
    let lms = template_landmarks(cfg);
    let group_center = |r: &Range<usize>| -> [f64; 3] {
        let mut c = [0.0; 3];
        for i in r.clone() {
            for k in 0..3 {
                c[k] += lms[[i, k]];
            }
        }
        let n = r.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    };
    let eye_l = group_center(&GROUP_EYE_LEFT);
    let eye_r = group_center(&GROUP_EYE_RIGHT);
    let mouth = group_center(&GROUP_MOUTH);
    let brow_l = group_center(&(33..42));
    let brow_r = group_center(&(42..51));

    let falloff = |p: [f64; 3], c: [f64; 3], rx: f64, ry: f64| -> f64 {
        let dx = (p[0] - c[0]) / rx;
        let dy = (p[1] - c[1]) / ry;
        let dz = (p[2] - c[2]) / (rx * 1.4);
        (-(dx * dx + dy * dy + dz * dz)).exp()
    };

    let v = cfg.n_vertices();
    let mut albedo = Array2::zeros((v, 3));
    for i in 0..v {
        let p = [
            cfg.template[[i, 0]],
            cfg.template[[i, 1]],
            cfg.template[[i, 2]],
        ];
        let dark = strength
            * (0.85 * falloff(p, eye_l, 0.075, 0.055)
                + 0.85 * falloff(p, eye_r, 0.075, 0.055)
                + 0.6 * falloff(p, brow_l, 0.085, 0.04)
                + 0.6 * falloff(p, brow_r, 0.085, 0.04));
        let lips = (strength * 1.1 * falloff(p, mouth, 0.11, 0.065)).min(1.0);
        for c in 0..3 {
            let base = skin[c] * (1.0 - dark.min(0.9));
            albedo[[i, c]] = (base * (1.0 - lips) + lip[c] * lips).clamp(0.0, 1.0);
        }
    }
    albedo
}

fn template_landmarks(cfg: &HeadModelConfig) -> Array2<f64> {
    let mut out = Array2::zeros((N_LANDMARKS, 3));
    for (li, a) in cfg.landmark_anchors.iter().enumerate() {
        let t = cfg.triangles[a.tri];
        for c in 0..3 {
            out[[li, c]] = a.bary[0] * cfg.template[[t[0], c]]
                + a.bary[1] * cfg.template[[t[1], c]]
                + a.bary[2] * cfg.template[[t[2], c]];
        }
    }
    out
}

/// Jaw skinning weights: smooth ramp toward the lower front of the head,
/// exactly zero over the upper/back regions.
fn jaw_weight_field(template: &Array2<f64>) -> Array1<f64> {
    Array1::from_shape_fn(template.nrows(), |i| {
        let ny = template[[i, 1]] / HEAD_SCALE[1];
        let nz = template[[i, 2]] / HEAD_SCALE[2];
        smoothstep((-ny - 0.1) / 0.6) * smoothstep((nz + 0.3) / 0.7)
    })
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Ray-cast the canonical landmark directions from the origin onto the mesh
/// and record (triangle, barycentric) anchors at the front-side hits.
fn anchor_landmarks(
    template: &Array2<f64>,
    triangles: &[[usize; 3]],
) -> Result<Vec<LandmarkAnchor>> {
    let mut anchors = Vec::with_capacity(N_LANDMARKS);
    for (li, (az, el)) in canonical_landmark_spherical().into_iter().enumerate() {
        let dir = spherical_to_dir(az, el);
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for (ti, t) in triangles.iter().enumerate() {
            if let Some((dist, bary)) = ray_triangle(dir, template, t) {
                if best.map(|(d, _, _)| dist > d).unwrap_or(true) {
                    best = Some((dist, ti, bary));
                }
            }
        }
        let (_, tri, bary) = best.ok_or_else(|| {
            Error::Config(format!("landmark direction {li} does not hit the mesh"))
        })?;
        anchors.push(LandmarkAnchor { tri, bary });
    }
    Ok(anchors)
}

/// Moller-Trumbore intersection of the ray `t * dir (t > 0)` from the origin
/// with one triangle; returns `(t, barycentric)` or None.
fn ray_triangle(
    dir: [f64; 3],
    template: &Array2<f64>,
    tri: &[usize; 3],
) -> Option<(f64, [f64; 3])> {
    use super::rotation::{cross, dot};
    let p = |i: usize| [template[[i, 0]], template[[i, 1]], template[[i, 2]]];
    let (a, b, c) = (p(tri[0]), p(tri[1]), p(tri[2]));
    let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let pv = cross(dir, e2);
    let det = dot(e1, pv);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = [-a[0], -a[1], -a[2]]; // origin - a
    let u = dot(tv, pv) * inv;
    if !(-1e-9..=1.0 + 1e-9).contains(&u) {
        return None;
    }
    let qv = cross(tv, e1);
    let vv = dot(dir, qv) * inv;
    if vv < -1e-9 || u + vv > 1.0 + 1e-9 {
        return None;
    }
    let t = dot(e2, qv) * inv;
    if t <= 1e-9 {
        return None;
    }
    let u = u.clamp(0.0, 1.0);
    let vv = vv.clamp(0.0, 1.0 - u);
    Some((t, [1.0 - u - vv, u, vv]))
}

/// Icosphere: subdivided icosahedron projected to the unit sphere.
fn icosphere(subdivisions: u32) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|v| normalize(*v))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            if let Some(&m) = cache.get(&key) {
                return m;
            }
            let m = normalize([
                (verts[a][0] + verts[b][0]) / 2.0,
                (verts[a][1] + verts[b][1]) / 2.0,
                (verts[a][2] + verts[b][2]) / 2.0,
            ]);
            verts.push(m);
            let idx = verts.len() - 1;
            cache.insert(key, idx);
            idx
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    (verts, faces)
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / l, v[1] / l, v[2] / l]
}

fn vertex_neighbors(n: usize, triangles: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); n];
    for t in triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            if !nb[a].contains(&b) {
                nb[a].push(b);
            }
            if !nb[b].contains(&a) {
                nb[b].push(a);
            }
        }
    }
    nb
}

fn smooth_field(field: &[[f64; 3]], neighbors: &[Vec<usize>]) -> Vec<[f64; 3]> {
    field
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if neighbors[i].is_empty() {
                return *f;
            }
            let mut m = [0.0; 3];
            for &j in &neighbors[i] {
                for c in 0..3 {
                    m[c] += field[j][c];
                }
            }
            let n = neighbors[i].len() as f64;
            [
                0.5 * f[0] + 0.5 * m[0] / n,
                0.5 * f[1] + 0.5 * m[1] / n,
                0.5 * f[2] + 0.5 * m[2] / n,
            ]
        })
        .collect()
}

/// Standard normal via Box-Muller (keeps us independent of distribution
/// crates' sampling internals for reproducibility across versions).
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.random();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn orthonormalize(columns: &mut [Vec<f64>]) -> Result<()> {
    let n = columns.len();
    for j in 0..n {
        for _pass in 0..2 {
            for i in 0..j {
                let d: f64 = columns[j]
                    .iter()
                    .zip(columns[i].iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let (head, tail) = columns.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(head[i].iter()) {
                    *x -= d * y;
                }
            }
        }
        let norm: f64 = columns[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return Err(Error::Config(
                "basis columns became linearly dependent during orthonormalization".into(),
            ));
        }
        for x in columns[j].iter_mut() {
            *x /= norm;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{evaluate, vertex_normals, HeadParams};

    #[test]
    fn icosphere_counts() {
        let (v0, f0) = icosphere(0);
        assert_eq!((v0.len(), f0.len()), (12, 20));
        let (v2, f2) = icosphere(2);
        assert_eq!((v2.len(), f2.len()), (162, 320));
    }

    #[test]
    fn generate_is_deterministic_in_seed() {
        let spec = RigSpec::default();
        let a = generate_rig(&spec).unwrap();
        let b = generate_rig(&spec).unwrap();
        assert_eq!(a.template, b.template);
        assert_eq!(a.b_expr, b.b_expr);
        assert_eq!(a.landmark_anchors, b.landmark_anchors);
        let c = generate_rig(&RigSpec {
            seed: 8,
            ..RigSpec::default()
        })
        .unwrap();
        assert_ne!(a.b_expr, c.b_expr);
        // Geometry and anchors are seed-independent; only bases vary.
        assert_eq!(a.template, c.template);
    }

    #[test]
    fn bases_are_orthonormal_before_amplitude() {
        let spec = RigSpec::default();
        let rig = generate_rig(&spec).unwrap();
        // Columns were orthonormal, then scaled: check pairwise dots.
        for (ampa, ca) in [(spec.shape_amp, &rig.b_shape), (spec.expr_amp, &rig.b_expr)] {
            for j in 0..ca.ncols() {
                let nj: f64 = ca.column(j).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((nj - ampa).abs() < 1e-8, "column norm {nj} vs {ampa}");
                for j2 in j + 1..ca.ncols() {
                    let d: f64 = ca
                        .column(j)
                        .iter()
                        .zip(ca.column(j2).iter())
                        .map(|(a, b)| a * b)
                        .sum();
                    assert!(d.abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn full_scale_dimensions_are_supported() {
        let rig = generate_rig(&RigSpec {
            subdivisions: 2,
            n_shape: 300,
            n_expr: 50,
            seed: 1,
            smooth_iters: 1,
            ..RigSpec::default()
        })
        .unwrap();
        assert_eq!(rig.b_shape.dim(), (3 * 162, 300));
        assert_eq!(rig.b_expr.dim(), (3 * 162, 50));
    }

    #[test]
    fn normals_are_unit_length() {
        let rig = generate_rig(&RigSpec::default()).unwrap();
        let vs = evaluate(&rig, &HeadParams::neutral(&rig)).unwrap();
        for i in 0..rig.n_vertices() {
            let n = [vs.normals[[i, 0]], vs.normals[[i, 1]], vs.normals[[i, 2]]];
            let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((l - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sphere_normals_point_outward() {
        let (verts, faces) = icosphere(1);
        let mut pos = Array2::zeros((verts.len(), 3));
        for (i, v) in verts.iter().enumerate() {
            for c in 0..3 {
                pos[[i, c]] = v[c];
            }
        }
        let normals = vertex_normals(&pos, &faces);
        for i in 0..verts.len() {
            let d = normals[[i, 0]] * verts[i][0]
                + normals[[i, 1]] * verts[i][1]
                + normals[[i, 2]] * verts[i][2];
            assert!(d > 0.9, "normal {i} not outward: dot {d}");
        }
    }

    #[test]
    fn landmark_table_is_well_formed() {
        let sph = canonical_landmark_spherical();
        assert_eq!(sph.len(), N_LANDMARKS);
        for &(az, el) in &sph {
            assert!((-90.0..=90.0).contains(&az), "azimuth {az}");
            assert!((-90.0..=90.0).contains(&el), "elevation {el}");
        }
        // All canonical directions are front-facing.
        for &(az, el) in &sph {
            assert!(spherical_to_dir(az, el)[2] > 0.0);
        }
    }

    #[test]
    fn anchors_sit_on_the_mesh_surface() {
        let rig = generate_rig(&RigSpec::default()).unwrap();
        for a in &rig.landmark_anchors {
            let s: f64 = a.bary.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(a.bary.iter().all(|&b| (-1e-9..=1.0 + 1e-9).contains(&b)));
        }
    }

    #[test]
    fn pose_mask_lists_are_consistent() {
        let (front, left, right) = pose_mask_index_lists();
        assert_eq!(front.len(), N_LANDMARKS);
        assert!(left.len() < N_LANDMARKS && !left.is_empty());
        assert!(right.len() < N_LANDMARKS && !right.is_empty());
        // Chin (index 16, azimuth 0) survives every mask; the jawline ends
        // (azimuth +-75) are dropped from their grazing side.
        assert!(left.contains(&16) && right.contains(&16));
        assert!(!left.contains(&0) && left.contains(&32));
        assert!(right.contains(&0) && !right.contains(&32));
    }

    #[test]
    fn jaw_weights_cover_both_extremes() {
        let rig = generate_rig(&RigSpec::default()).unwrap();
        let zeros = rig.jaw_weights.iter().filter(|&&w| w == 0.0).count();
        let high = rig.jaw_weights.iter().filter(|&&w| w > 0.7).count();
        assert!(zeros > rig.n_vertices() / 4, "zeros: {zeros}");
        assert!(high > 3, "high: {high}");
    }

    #[test]
    fn painted_albedo_darkens_eyes_and_tints_lips() {
        let rig = generate_rig(&RigSpec::default()).unwrap();
        let skin = [0.8, 0.62, 0.5];
        let albedo = paint_feature_albedo(&rig, skin, [0.55, 0.2, 0.25], 1.0);
        assert!(albedo.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let lms = template_landmarks(&rig);
        // Vertex nearest the left-eye center must be darker than skin.
        let eye = GROUP_EYE_LEFT.start;
        let mut best = (f64::INFINITY, 0);
        for i in 0..rig.n_vertices() {
            let mut d = 0.0;
            for c in 0..3 {
                let diff = rig.template[[i, c]] - lms[[eye, c]];
                d += diff * diff;
            }
            if d < best.0 {
                best = (d, i);
            }
        }
        assert!(albedo[[best.1, 1]] < skin[1] * 0.8);
    }
}
