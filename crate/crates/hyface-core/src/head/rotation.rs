//! Axis-angle (Rodrigues) rotations and their derivatives.
//!
//! Rotations are encoded as axis-angle vectors `v` in radians: the rotation
//! axis is `v / |v|`, the angle is `|v|`. The zero vector is the identity.

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Rodrigues formula: axis-angle -> rotation matrix.
pub fn rodrigues(v: [f64; 3]) -> Mat3 {
    let theta2 = dot(v, v);
    if theta2 < 1e-24 {
        return IDENTITY;
    }
    let theta = theta2.sqrt();
    let k = [v[0] / theta, v[1] / theta, v[2] / theta];
    let (s, c) = theta.sin_cos();
    let kx = cross_matrix(k);
    // R = I + sin(t) K + (1 - cos(t)) K^2
    let kx2 = mat_mul(&kx, &kx);
    let mut r = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += s * kx[i][j] + (1.0 - c) * kx2[i][j];
        }
    }
    r
}

/// Derivatives of the rotation matrix w.r.t. each axis-angle component:
/// returns `[dR/dv_0, dR/dv_1, dR/dv_2]`.
///
/// Uses the closed form `dR/dv_k = ((v_k [v]x + [v x (I - R) e_k]x) / |v|^2) R`
/// with the small-angle limit `dR/dv_k = [e_k]x`.
pub fn rodrigues_jacobian(v: [f64; 3]) -> [Mat3; 3] {
    let theta2 = dot(v, v);
    if theta2 < 1e-16 {
        return [
            cross_matrix([1.0, 0.0, 0.0]),
            cross_matrix([0.0, 1.0, 0.0]),
            cross_matrix([0.0, 0.0, 1.0]),
        ];
    }
    let r = rodrigues(v);
    let vx = cross_matrix(v);
    let mut out = [IDENTITY; 3];
    for k in 0..3 {
        // (I - R) e_k is the k-th column of I - R.
        let col = [
            (if k == 0 { 1.0 } else { 0.0 }) - r[0][k],
            (if k == 1 { 1.0 } else { 0.0 }) - r[1][k],
            (if k == 2 { 1.0 } else { 0.0 }) - r[2][k],
        ];
        let vxc = cross_matrix(cross(v, col));
        let mut a = IDENTITY;
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = (v[k] * vx[i][j] + vxc[i][j]) / theta2;
            }
        }
        out[k] = mat_mul(&a, &r);
    }
    out
}

/// Skew-symmetric cross-product matrix `[v]x` with `[v]x u = v x u`.
pub fn cross_matrix(v: [f64; 3]) -> Mat3 {
    [
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// `m^T v`, used by adjoint (gradient) passes.
pub fn mat_t_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
