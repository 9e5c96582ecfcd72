//! Training objectives: landmark terms, region/image supervision, and the
//! weighted total. The cycle-consistency terms that need live networks are
//! built on top of these in the companion crate; everything here is a pure
//! function of arrays.

pub mod perceptual;
pub mod region;

pub use perceptual::{image_loss, perceptual_loss, photometric_loss, FeatureExtractor, GaussianPyramid};
pub use region::{region_loss, RegionMasks, DILATION_PX_AT_224};

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::N_LANDMARKS;

/// Half-width (radians) of the yaw band treated as frontal.
pub const DEFAULT_POSE_EPSILON: f64 = 0.05;

/// Per-term weights of the total training objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ec: f64,
    pub lambda_lmk: f64,
    pub lambda_tc: f64,
    pub lambda_pdl: f64,
    pub lambda_rg: f64,
    pub lambda_ic: f64,
    /// Photometric sub-weight inside the image-level term.
    pub lambda_pho: f64,
    /// Perceptual sub-weight inside the image-level term.
    pub lambda_per: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ec: 1.0,
            lambda_lmk: 100.0,
            lambda_tc: 5.0,
            lambda_pdl: 500.0,
            lambda_rg: 10.0,
            lambda_ic: 10.0,
            lambda_pho: 1.0,
            lambda_per: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_ec,
            self.lambda_lmk,
            self.lambda_tc,
            self.lambda_pdl,
            self.lambda_rg,
            self.lambda_ic,
            self.lambda_pho,
            self.lambda_per,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// The six top-level loss terms. Every field must be filled in before
/// [`total_loss`] will accept the set; `Option` makes a forgotten term a
/// loud error instead of a silent zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub ec: Option<f64>,
    pub lmk: Option<f64>,
    pub tc: Option<f64>,
    pub pdl: Option<f64>,
    pub rg: Option<f64>,
    pub ic: Option<f64>,
}

/// Scalar loss terms plus their weighted total.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossReport {
    pub ec: f64,
    pub lmk: f64,
    pub tc: f64,
    pub pdl: f64,
    pub rg: f64,
    pub ic: f64,
    pub total: f64,
}

impl LossReport {
    /// Check the defining identity `total = Σ λ_x · L_x` to 1e-6.
    pub fn is_consistent(&self, weights: &LossWeights) -> bool {
        let sum = weights.lambda_ec * self.ec
            + weights.lambda_lmk * self.lmk
            + weights.lambda_tc * self.tc
            + weights.lambda_pdl * self.pdl
            + weights.lambda_rg * self.rg
            + weights.lambda_ic * self.ic;
        (self.total - sum).abs() <= 1e-6
    }
}

/// Combine the six terms into the weighted total.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    let take = |v: Option<f64>, name: &str| -> Result<f64> {
        let v = v.ok_or_else(|| Error::Validation(format!("loss term {name} missing")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Validation(format!(
                "loss term {name} must be finite and non-negative, got {v}"
            )));
        }
        Ok(v)
    };
    let ec = take(terms.ec, "ec")?;
    let lmk = take(terms.lmk, "lmk")?;
    let tc = take(terms.tc, "tc")?;
    let pdl = take(terms.pdl, "pdl")?;
    let rg = take(terms.rg, "rg")?;
    let ic = take(terms.ic, "ic")?;
    let total = weights.lambda_ec * ec
        + weights.lambda_lmk * lmk
        + weights.lambda_tc * tc
        + weights.lambda_pdl * pdl
        + weights.lambda_rg * rg
        + weights.lambda_ic * ic;
    Ok(LossReport {
        ec,
        lmk,
        tc,
        pdl,
        rg,
        ic,
        total,
    })
}

/// Yaw-dependent landmark visibility masks.
///
/// Each mask is a 203-length inclusion vector; exactly one of the three is
/// active for any yaw angle (see [`pose_mask_select`]). The default index
/// sets ship as plain-text asset files (one index per line) so deployments
/// can swap in their own.
#[derive(Debug, Clone)]
pub struct PoseMasks {
    pub front: Vec<bool>,
    pub left: Vec<bool>,
    pub right: Vec<bool>,
    /// Frontal band half-width in radians.
    pub epsilon: f64,
}

impl PoseMasks {
    /// The masks shipped with the crate, derived from each landmark's
    /// canonical azimuth on the head surface.
    pub fn builtin() -> PoseMasks {
        let parse = |text: &str| -> Vec<usize> {
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.trim().parse().expect("built-in pose mask index"))
                .collect()
        };
        PoseMasks::from_index_lists(
            &parse(include_str!("../../assets/pose_mask_front.txt")),
            &parse(include_str!("../../assets/pose_mask_left.txt")),
            &parse(include_str!("../../assets/pose_mask_right.txt")),
            DEFAULT_POSE_EPSILON,
        )
        .expect("built-in pose masks are valid")
    }

    /// Build masks from explicit kept-index lists.
    pub fn from_index_lists(
        front: &[usize],
        left: &[usize],
        right: &[usize],
        epsilon: f64,
    ) -> Result<PoseMasks> {
        if !(epsilon > 0.0) {
            return Err(Error::Validation(format!(
                "pose epsilon must be positive, got {epsilon}"
            )));
        }
        let to_mask = |ids: &[usize]| -> Result<Vec<bool>> {
            let mut m = vec![false; N_LANDMARKS];
            for &i in ids {
                if i >= N_LANDMARKS {
                    return Err(Error::Validation(format!(
                        "pose mask index {i} out of range (< {N_LANDMARKS})"
                    )));
                }
                m[i] = true;
            }
            Ok(m)
        };
        Ok(PoseMasks {
            front: to_mask(front)?,
            left: to_mask(left)?,
            right: to_mask(right)?,
            epsilon,
        })
    }

    /// Load masks from three index files, one landmark index per line.
    pub fn from_files(front: &Path, left: &Path, right: &Path, epsilon: f64) -> Result<PoseMasks> {
        let read = |path: &Path| -> Result<Vec<usize>> {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut ids = Vec::new();
            for (ln, line) in text.lines().enumerate() {
                let t = line.trim();
                if t.is_empty() {
                    continue;
                }
                let idx: usize = t.parse().map_err(|_| Error::Format {
                    file: path.to_path_buf(),
                    line: ln + 1,
                    msg: format!("expected a landmark index, got {t:?}"),
                })?;
                ids.push(idx);
            }
            Ok(ids)
        };
        PoseMasks::from_index_lists(&read(front)?, &read(left)?, &read(right)?, epsilon)
    }
}

impl Default for PoseMasks {
    fn default() -> Self {
        PoseMasks::builtin()
    }
}

/// Pick the landmark mask for a yaw angle. The frontal band is closed:
/// `theta_y = ±epsilon` still selects the front mask.
pub fn pose_mask_select(theta_y: f64, masks: &PoseMasks) -> &[bool] {
    if theta_y < -masks.epsilon {
        &masks.left
    } else if theta_y > masks.epsilon {
        &masks.right
    } else {
        &masks.front
    }
}

/// Pose-dependent landmark loss: L2 norm of the coordinate differences over
/// the landmarks kept by the yaw-selected mask.
pub fn pdl_loss(
    detected: &Array2<f64>,
    projected: &Array2<f64>,
    theta_y: f64,
    masks: &PoseMasks,
) -> Result<f64> {
    for (name, l) in [("detected", detected), ("projected", projected)] {
        if l.dim() != (N_LANDMARKS, 2) {
            return Err(Error::Validation(format!(
                "{name} landmarks must be ({N_LANDMARKS}, 2), got {:?}",
                l.dim()
            )));
        }
    }
    let mask = pose_mask_select(theta_y, masks);
    let mut sq = 0.0;
    for i in 0..N_LANDMARKS {
        if mask[i] {
            let dx = detected[[i, 0]] - projected[[i, 0]];
            let dy = detected[[i, 1]] - projected[[i, 1]];
            sq += dx * dx + dy * dy;
        }
    }
    Ok(sq.sqrt())
}

/// Unmasked landmark loss: mean over landmarks of the L1 distance between
/// corresponding points.
pub fn landmark_loss(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() || a.ncols() != 2 || a.nrows() == 0 {
        return Err(Error::Validation(format!(
            "landmark sets must share a non-empty (n, 2) shape, got {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        sum += (a[[i, 0]] - b[[i, 0]]).abs() + (a[[i, 1]] - b[[i, 1]]).abs();
    }
    Ok(sum / n as f64)
}
