//! Z-buffered triangle rasterization with barycentric color interpolation,
//! plus the analytic vector-Jacobian product used for training.
//!
//! Differentiability scheme: gradients flow through the barycentric weights
//! of *covered* pixels (screen-space interior gradients). Coverage itself is
//! not differentiated — there is no gradient across the silhouette; pose is
//! driven by landmark losses, not silhouette gradients.
//!
//! Rasterization is single-threaded and deterministic: triangles are
//! traversed in list order and depth ties keep the first-drawn winner.

use ndarray::{Array2, Array3};

use crate::coords::ndc_to_pixel;
use crate::error::{Error, Result};

/// Output of one rasterization pass. `tri_id`/`bary` record per-pixel
/// provenance so the backward pass can re-derive gradients.
pub struct RasterOutput {
    /// `(h, w, 3)` interpolated colors; zero outside coverage.
    pub color: Array3<f32>,
    /// `(h, w)` binary coverage mask.
    pub mask: Array2<f32>,
    /// `(h, w)` interpolated depth (larger = nearer); zero outside coverage.
    pub depth: Array2<f32>,
    /// `(h, w)` index of the winning triangle, -1 outside coverage.
    pub tri_id: Array2<i32>,
    /// `(h, w, 3)` barycentric weights of the winning triangle.
    pub bary: Array3<f64>,
    /// Count of zero-area triangles skipped during traversal.
    pub degenerate_triangles: usize,
}

/// Rasterize screen-space vertices (`(v, 3)`: NDC x/y plus depth, larger
/// depth = nearer) with per-vertex colors into an `h x w` framebuffer.
pub fn rasterize_screen(
    screen: &Array2<f64>,
    colors: &Array2<f64>,
    triangles: &[[usize; 3]],
    h: usize,
    w: usize,
) -> Result<RasterOutput> {
    let v = screen.nrows();
    if screen.ncols() != 3 {
        return Err(Error::Validation(format!(
            "screen vertices must be (v, 3), got {:?}",
            screen.dim()
        )));
    }
    if colors.dim() != (v, 3) {
        return Err(Error::Validation(format!(
            "colors must be ({v}, 3), got {:?}",
            colors.dim()
        )));
    }

    // Precompute pixel-space positions once.
    let mut px = vec![[0.0f64; 2]; v];
    for i in 0..v {
        let (x, y) = ndc_to_pixel(screen[[i, 0]], screen[[i, 1]], w, h);
        px[i] = [x, y];
    }

    let mut color = Array3::zeros((h, w, 3));
    let mut mask = Array2::zeros((h, w));
    let mut depth = Array2::zeros((h, w));
    let mut zbuf = Array2::from_elem((h, w), f64::NEG_INFINITY);
    let mut tri_id = Array2::from_elem((h, w), -1i32);
    let mut bary = Array3::zeros((h, w, 3));
    let mut degenerate = 0usize;

    for (ti, tri) in triangles.iter().enumerate() {
        let a = px[tri[0]];
        let b = px[tri[1]];
        let c = px[tri[2]];
        let area = cross2(sub(b, a), sub(c, a));
        if area.abs() < 1e-12 {
            degenerate += 1;
            continue;
        }

        let min_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let max_x = (a[0].max(b[0]).max(c[0]).ceil() as isize).min(w as isize - 1);
        let min_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let max_y = (a[1].max(b[1]).max(c[1]).ceil() as isize).min(h as isize - 1);
        if max_x < min_x as isize || max_y < min_y as isize {
            continue;
        }

        for py in min_y..=max_y as usize {
            for pxx in min_x..=max_x as usize {
                let p = [pxx as f64, py as f64];
                let (wa, wb, wc) = barycentric(p, a, b, c, area);
                if wa < 0.0 || wb < 0.0 || wc < 0.0 {
                    continue;
                }
                let z = wa * screen[[tri[0], 2]]
                    + wb * screen[[tri[1], 2]]
                    + wc * screen[[tri[2], 2]];
                if z <= zbuf[[py, pxx]] {
                    continue;
                }
                zbuf[[py, pxx]] = z;
                tri_id[[py, pxx]] = ti as i32;
                bary[[py, pxx, 0]] = wa;
                bary[[py, pxx, 1]] = wb;
                bary[[py, pxx, 2]] = wc;
                mask[[py, pxx]] = 1.0;
                depth[[py, pxx]] = z as f32;
                for ch in 0..3 {
                    let col = wa * colors[[tri[0], ch]]
                        + wb * colors[[tri[1], ch]]
                        + wc * colors[[tri[2], ch]];
                    color[[py, pxx, ch]] = col as f32;
                }
            }
        }
    }

    Ok(RasterOutput {
        color,
        mask,
        depth,
        tri_id,
        bary,
        degenerate_triangles: degenerate,
    })
}

/// Vector-Jacobian product of [`rasterize_screen`] w.r.t. the color output:
/// given `d(loss)/d(color)` as `(h, w, 3)`, returns
/// `(d(loss)/d(screen), d(loss)/d(colors))`, both `(v, 3)`.
///
/// Screen gradients land on the NDC x/y components of covered pixels'
/// winning triangles; depth receives no gradient (visibility is treated as
/// non-differentiable).
pub fn rasterize_vjp(
    screen: &Array2<f64>,
    colors: &Array2<f64>,
    triangles: &[[usize; 3]],
    h: usize,
    w: usize,
    grad_color: &Array3<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if grad_color.dim() != (h, w, 3) {
        return Err(Error::Validation(format!(
            "grad_color must be ({h}, {w}, 3), got {:?}",
            grad_color.dim()
        )));
    }
    let out = rasterize_screen(screen, colors, triangles, h, w)?;
    let v = screen.nrows();

    let mut px = vec![[0.0f64; 2]; v];
    for i in 0..v {
        let (x, y) = ndc_to_pixel(screen[[i, 0]], screen[[i, 1]], w, h);
        px[i] = [x, y];
    }
    // Chain rule from pixel space back to NDC.
    let dpx_dx = w as f64 / 2.0;
    let dpy_dy = -(h as f64) / 2.0;

    let mut grad_screen = Array2::zeros((v, 3));
    let mut grad_colors = Array2::zeros((v, 3));

    for py in 0..h {
        for pxx in 0..w {
            let ti = out.tri_id[[py, pxx]];
            if ti < 0 {
                continue;
            }
            let tri = triangles[ti as usize];
            let wgt = [
                out.bary[[py, pxx, 0]],
                out.bary[[py, pxx, 1]],
                out.bary[[py, pxx, 2]],
            ];
            let g = [
                grad_color[[py, pxx, 0]],
                grad_color[[py, pxx, 1]],
                grad_color[[py, pxx, 2]],
            ];
            // d(pixel color)/d(vertex color) = barycentric weight.
            for k in 0..3 {
                for ch in 0..3 {
                    grad_colors[[tri[k], ch]] += wgt[k] * g[ch];
                }
            }
            // d(pixel color)/d(vertex position) via barycentric derivatives.
            let p = [pxx as f64, py as f64];
            let grads = barycentric_grads(p, px[tri[0]], px[tri[1]], px[tri[2]]);
            // Upstream scalar per barycentric weight: sum_ch g_ch * color_k_ch.
            for k in 0..3 {
                let mut up = 0.0;
                for ch in 0..3 {
                    up += g[ch] * colors[[tri[k], ch]];
                }
                // grads[k][m] = d w_k / d (vertex m x, vertex m y).
                for m in 0..3 {
                    grad_screen[[tri[m], 0]] += up * grads[k][m][0] * dpx_dx;
                    grad_screen[[tri[m], 1]] += up * grads[k][m][1] * dpy_dy;
                }
            }
        }
    }
    Ok((grad_screen, grad_colors))
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Barycentric weights of point `p` in triangle `(a, b, c)` with signed
/// area-doubled `area = cross(b - a, c - a)`.
fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2], area: f64) -> (f64, f64, f64) {
    let na = cross2(sub(b, p), sub(c, p));
    let nb = cross2(sub(c, p), sub(a, p));
    let wa = na / area;
    let wb = nb / area;
    (wa, wb, 1.0 - wa - wb)
}

/// Derivatives of the three barycentric weights w.r.t. the six vertex
/// coordinates: `grads[k][m] = d w_k / d (m.x, m.y)` for weight k and vertex
/// m (0 = a, 1 = b, 2 = c), all in pixel space.
fn barycentric_grads(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [[[f64; 2]; 3]; 3] {
    let verts = [a, b, c];
    let d = cross2(sub(b, a), sub(c, a));
    // dD/d(vertex m): cyclic closed forms.
    let dd = [
        [b[1] - c[1], c[0] - b[0]],
        [c[1] - a[1], a[0] - c[0]],
        [a[1] - b[1], b[0] - a[0]],
    ];
    let mut out = [[[0.0; 2]; 3]; 3];
    for k in 0..3 {
        // w_k = N_k / D with N_k = cross(u - p, v - p), (u, v) the other two
        // vertices in cyclic order.
        let u = verts[(k + 1) % 3];
        let vv = verts[(k + 2) % 3];
        let nk = cross2(sub(u, p), sub(vv, p));
        let wk = nk / d;
        // dN_k/du = (v.y - p.y, -(v.x - p.x)); dN_k/dv = (-(u.y - p.y), u.x - p.x).
        let mut dn = [[0.0; 2]; 3];
        dn[(k + 1) % 3] = [vv[1] - p[1], -(vv[0] - p[0])];
        dn[(k + 2) % 3] = [-(u[1] - p[1]), u[0] - p[0]];
        for m in 0..3 {
            for xy in 0..2 {
                out[k][m][xy] = (dn[m][xy] - wk * dd[m][xy]) / d;
            }
        }
    }
    out
}
