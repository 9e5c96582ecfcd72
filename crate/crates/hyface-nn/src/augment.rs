//! Expression augmentation for the cycle-consistency losses.
//!
//! Augmentation perturbs the expression parameter group
//! `[psi | theta_j | eye_b]` of each batch item before the extra views are
//! rendered, so the re-encoding losses see expressions the encoder did not
//! itself predict. Per item one branch fires: zero the expression
//! coefficients (jaw/eyes untouched), adopt another batch item's whole
//! group, or jitter — Gaussian noise on a random subset of the expression
//! coefficients plus uniform jaw noise. Everything is plain `f64` on
//! arrays; the trainer feeds the result back in as constants.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use hyface_core::head::rig::gaussian;

use crate::error::{Error, Result};

/// Augmentation distribution. All-zero parameters make the augmentation an
/// exact identity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Standard deviation of the Gaussian jitter on expression coefficients.
    pub noise_std: f64,
    /// Probability that an individual expression coefficient is jittered.
    pub noise_fraction: f64,
    /// Half-range of the uniform jitter on the jaw rotation components.
    pub jaw_range: f64,
    /// Probability of the expression-zeroing branch.
    pub zero_prob: f64,
    /// Probability of adopting another batch item's group.
    pub swap_prob: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            noise_std: 0.1,
            noise_fraction: 0.5,
            jaw_range: 0.05,
            zero_prob: 0.15,
            swap_prob: 0.15,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("noise_fraction", self.noise_fraction),
            ("zero_prob", self.zero_prob),
            ("swap_prob", self.swap_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if self.zero_prob + self.swap_prob > 1.0 {
            return Err(Error::Config(format!(
                "zero_prob + swap_prob must not exceed 1, got {}",
                self.zero_prob + self.swap_prob
            )));
        }
        for (name, v) in [("noise_std", self.noise_std), ("jaw_range", self.jaw_range)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Augment a batch of expression groups `(batch, n_expr + 5)` laid out as
/// `[psi | theta_j(3) | eye_b(2)]`. Swaps read the *original* rows, so the
/// result never depends on batch iteration order. A single-item batch has
/// nobody to swap with; its swap branch is the identity.
pub fn augment_expression(
    groups: &Array2<f64>,
    n_expr: usize,
    spec: &AugmentationSpec,
    rng: &mut ChaCha12Rng,
) -> Result<Array2<f64>> {
    spec.validate()?;
    let (batch, width) = groups.dim();
    if width != n_expr + 5 {
        return Err(Error::Validation(format!(
            "expression groups must be (batch, n_expr + 5) = (_, {}), got {:?}",
            n_expr + 5,
            groups.dim()
        )));
    }
    if batch == 0 {
        return Err(Error::Validation("expression batch must be non-empty".into()));
    }
    if groups.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "expression groups must be finite before augmentation".into(),
        ));
    }

    let mut out = groups.clone();
    for b in 0..batch {
        let u: f64 = rng.random();
        if u < spec.zero_prob {
            for k in 0..n_expr {
                out[[b, k]] = 0.0;
            }
        } else if u < spec.zero_prob + spec.swap_prob {
            if batch > 1 {
                let mut j = rng.random_range(0..batch - 1);
                if j >= b {
                    j += 1;
                }
                for k in 0..width {
                    out[[b, k]] = groups[[j, k]];
                }
            }
        } else {
            for k in 0..n_expr {
                if rng.random::<f64>() < spec.noise_fraction {
                    out[[b, k]] += spec.noise_std * gaussian(rng);
                }
            }
            for k in n_expr..n_expr + 3 {
                out[[b, k]] += rng.random_range(-1.0..1.0) * spec.jaw_range;
            }
        }
    }
    Ok(out)
}
