//! The full model: geometry encoders, appearance tokenizer and synthesizer
//! built over one parameter store, plus the cross-component configuration
//! checks that keep their shapes compatible.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use hyface_core::head::HeadModelConfig;

use crate::error::{Error, Result};
use crate::geometry::{GeometryConfig, GeometryEncoders};
use crate::store::ParamStore;
use crate::synthesizer::{Tfs, TfsConfig};
use crate::tokenizer::{Mfat, MfatConfig};

/// Parameter-name prefixes of the trainable groups. Freeze contracts and
/// optimizer grouping key off these.
pub const PREFIX_GEOMETRY: &str = "geom.";
pub const PREFIX_E_BETA: &str = "geom.e_beta.";
pub const PREFIX_E_PSI: &str = "geom.e_psi.";
pub const PREFIX_E_THETA: &str = "geom.e_theta.";
pub const PREFIX_TOKENIZER: &str = "mfat.";
pub const PREFIX_SYNTHESIZER: &str = "tfs.";

/// Architecture of the whole model. The three sub-configs must agree on the
/// working resolution and on the token geometry.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub geometry: GeometryConfig,
    pub tokenizer: MfatConfig,
    pub synthesizer: TfsConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.tokenizer.validate()?;
        self.synthesizer.validate()?;
        let r = self.geometry.input_resolution;
        if self.tokenizer.input_resolution != r || self.synthesizer.resolution != r {
            return Err(Error::Config(format!(
                "working resolutions disagree: geometry {r}, tokenizer {}, synthesizer {}",
                self.tokenizer.input_resolution, self.synthesizer.resolution
            )));
        }
        if self.tokenizer.k() != self.synthesizer.n_blocks() {
            return Err(Error::Config(format!(
                "tokenizer has {} scales but the synthesizer has {} blocks",
                self.tokenizer.k(),
                self.synthesizer.n_blocks()
            )));
        }
        if self.tokenizer.token_dim != self.synthesizer.token_dim {
            return Err(Error::Config(format!(
                "token dimensions disagree: tokenizer {}, synthesizer {}",
                self.tokenizer.token_dim, self.synthesizer.token_dim
            )));
        }
        Ok(())
    }

    /// Check the encoder's parameter counts against a rig.
    pub fn check_rig(&self, rig: &HeadModelConfig) -> Result<()> {
        if self.geometry.n_shape != rig.n_shape() || self.geometry.n_expr != rig.n_expr() {
            return Err(Error::Config(format!(
                "geometry config predicts {}+{} coefficients but the rig has {}+{}",
                self.geometry.n_shape,
                self.geometry.n_expr,
                rig.n_shape(),
                rig.n_expr()
            )));
        }
        Ok(())
    }

    /// A desk-scale configuration matched to a rig: the given square
    /// resolution, rig-derived coefficient counts, and small channel stacks.
    pub fn desk(rig: &HeadModelConfig, resolution: usize) -> ModelConfig {
        let channels = vec![8, 16, 32, 64];
        let token_dim = 32;
        ModelConfig {
            geometry: GeometryConfig {
                input_resolution: resolution,
                stage_channels: channels.clone(),
                n_shape: rig.n_shape(),
                n_expr: rig.n_expr(),
                allow_resize: false,
            },
            tokenizer: MfatConfig {
                input_resolution: resolution,
                stage_channels: channels.clone(),
                token_dim,
                projection_bias: false,
                zero_init_projection: true,
                allow_resize: false,
            },
            synthesizer: TfsConfig {
                resolution,
                block_channels: channels,
                token_dim,
                adain_hidden: 32,
                enable_token_decoder: true,
            },
        }
    }
}

/// All trainable components over one parameter store, plus the rig they
/// render with. Modules hold live views into the store's variables, so an
/// optimizer step through the store is immediately visible here.
pub struct ModelBundle {
    pub config: ModelConfig,
    pub rig: Arc<HeadModelConfig>,
    pub encoders: GeometryEncoders,
    pub tokenizer: Mfat,
    pub synthesizer: Tfs,
}

impl ModelBundle {
    pub fn new(
        store: &mut ParamStore,
        config: &ModelConfig,
        rig: Arc<HeadModelConfig>,
    ) -> Result<ModelBundle> {
        config.validate()?;
        config.check_rig(&rig)?;
        let encoders = GeometryEncoders::new(store, "geom", &config.geometry)?;
        let tokenizer = Mfat::new(store, "mfat", &config.tokenizer)?;
        let synthesizer = Tfs::new(store, "tfs", &config.synthesizer)?;
        Ok(ModelBundle {
            config: config.clone(),
            rig,
            encoders,
            tokenizer,
            synthesizer,
        })
    }
}
