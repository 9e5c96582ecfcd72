//! Landmark-guided region masks: filled convex hulls of the mouth and eye
//! landmark groups, dilated by a small radius, and the L2 loss restricted to
//! them.

use ndarray::{Array2, Array3};

use crate::coords::unit_to_pixel;
use crate::error::{Error, Result};
use crate::head::rig::{GROUP_EYE_LEFT, GROUP_EYE_RIGHT, GROUP_MOUTH};
use crate::head::N_LANDMARKS;

/// Hull dilation radius in pixels at a 224-pixel image edge; scaled
/// proportionally for other resolutions.
pub const DILATION_PX_AT_224: f64 = 2.0;

/// Binary mouth/eye coverage maps for the region loss.
#[derive(Debug, Clone)]
pub struct RegionMasks {
    /// `(h, w)` mouth-region indicator.
    pub mouth: Array2<f32>,
    /// `(h, w)` eye-region indicator (both eyes).
    pub eyes: Array2<f32>,
}

impl RegionMasks {
    /// Build masks from a full landmark set in unit image coordinates.
    ///
    /// The mouth mask fills the convex hull of the mouth landmarks; the eye
    /// mask is the union of the two per-eye hulls. Hulls are dilated by
    /// [`DILATION_PX_AT_224`] scaled to the output resolution. Landmarks
    /// outside the frame simply pull their hull off-image; only on-image
    /// pixels are ever set.
    pub fn from_landmarks(
        landmarks_unit: &Array2<f64>,
        height: usize,
        width: usize,
    ) -> Result<RegionMasks> {
        if landmarks_unit.dim() != (N_LANDMARKS, 2) {
            return Err(Error::Validation(format!(
                "landmarks must be ({N_LANDMARKS}, 2), got {:?}",
                landmarks_unit.dim()
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Validation("mask size must be non-zero".into()));
        }
        let radius = DILATION_PX_AT_224 * (height.min(width) as f64) / 224.0;
        let group_px = |range: std::ops::Range<usize>| -> Vec<(f64, f64)> {
            range
                .map(|i| {
                    unit_to_pixel(
                        landmarks_unit[[i, 0]],
                        landmarks_unit[[i, 1]],
                        width,
                        height,
                    )
                })
                .collect()
        };
        let mouth = hull_mask(&group_px(GROUP_MOUTH), height, width, radius);
        let mut eyes = hull_mask(&group_px(GROUP_EYE_LEFT), height, width, radius);
        let right = hull_mask(&group_px(GROUP_EYE_RIGHT), height, width, radius);
        for (e, r) in eyes.iter_mut().zip(right.iter()) {
            *e = e.max(*r);
        }
        Ok(RegionMasks { mouth, eyes })
    }
}

/// Region loss: L2 norm of `(M_m + M_e) * (I - Î)` over all pixels and
/// channels. The masks enter as literal weights, so they should be disjoint
/// (they are, when built from mouth/eye landmark groups).
pub fn region_loss(i: &Array3<f32>, i_hat: &Array3<f32>, masks: &RegionMasks) -> Result<f64> {
    let (h, w, c) = i.dim();
    if i_hat.dim() != (h, w, c) || c != 3 {
        return Err(Error::Validation(format!(
            "region_loss images must share an (h, w, 3) shape, got {:?} and {:?}",
            i.dim(),
            i_hat.dim()
        )));
    }
    if masks.mouth.dim() != (h, w) || masks.eyes.dim() != (h, w) {
        return Err(Error::Validation(format!(
            "region masks {:?}/{:?} do not match image {:?}",
            masks.mouth.dim(),
            masks.eyes.dim(),
            i.dim()
        )));
    }
    let mut sq = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let weight = (masks.mouth[[y, x]] + masks.eyes[[y, x]]) as f64;
            if weight == 0.0 {
                continue;
            }
            for ch in 0..3 {
                let d = weight * (i[[y, x, ch]] as f64 - i_hat[[y, x, ch]] as f64);
                sq += d * d;
            }
        }
    }
    Ok(sq.sqrt())
}

/// Rasterize the dilated convex hull of `points` (continuous pixel
/// coordinates) into an `(h, w)` indicator: a pixel is set when its center
/// lies inside the hull or within `radius` of it. Degenerate hulls (all
/// points collinear or coincident) degrade to capsules/discs around the
/// surviving hull vertices.
fn hull_mask(points: &[(f64, f64)], h: usize, w: usize, radius: f64) -> Array2<f32> {
    let mut mask = Array2::zeros((h, w));
    let hull = convex_hull(points);
    if hull.is_empty() {
        return mask;
    }
    // Bounding box prune keeps the per-pixel test cheap.
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in &hull {
        x0 = x0.min(x - radius);
        y0 = y0.min(y - radius);
        x1 = x1.max(x + radius);
        y1 = y1.max(y + radius);
    }
    let xs = (x0.floor().max(0.0)) as usize..=(x1.ceil().min((w - 1) as f64).max(0.0)) as usize;
    let ys = (y0.floor().max(0.0)) as usize..=(y1.ceil().min((h - 1) as f64).max(0.0)) as usize;
    if x1 < 0.0 || y1 < 0.0 {
        return mask;
    }
    for y in ys {
        for x in xs.clone() {
            let p = (x as f64, y as f64);
            if hull_contains(&hull, p) || distance_to_hull(&hull, p) <= radius {
                mask[[y, x]] = 1.0;
            }
        }
    }
    mask
}

/// Andrew's monotone chain; returns the hull counter-clockwise in pixel
/// coordinates (y down), dropping collinear points. One or two distinct
/// input points yield a hull of that size.
fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        // All input points collinear; fall back to the segment endpoints.
        let mut seg = vec![pts[0], *pts.last().unwrap()];
        seg.dedup();
        return seg;
    }
    lower
}

/// Point-in-convex-polygon test for a hull in the winding order produced by
/// [`convex_hull`]. Hulls smaller than a triangle contain nothing.
fn hull_contains(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    if hull.len() < 3 {
        return false;
    }
    let n = hull.len();
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if cross < -1e-12 {
            return false;
        }
    }
    true
}

/// Euclidean distance from a point to the hull boundary (or to the
/// segment/point itself for degenerate hulls).
fn distance_to_hull(hull: &[(f64, f64)], p: (f64, f64)) -> f64 {
    match hull.len() {
        0 => f64::INFINITY,
        1 => {
            let (dx, dy) = (p.0 - hull[0].0, p.1 - hull[0].1);
            (dx * dx + dy * dy).sqrt()
        }
        2 => segment_distance(hull[0], hull[1], p),
        n => (0..n)
            .map(|i| segment_distance(hull[i], hull[(i + 1) % n], p))
            .fold(f64::INFINITY, f64::min),
    }
}

fn segment_distance(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len_sq = abx * abx + aby * aby;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        ((apx * abx + apy * aby) / len_sq).clamp(0.0, 1.0)
    };
    let (dx, dy) = (p.0 - (a.0 + t * abx), p.1 - (a.1 + t * aby));
    (dx * dx + dy * dy).sqrt()
}
