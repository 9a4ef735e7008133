use serde::{Deserialize, Serialize};

use crate::codecs::{LinearCodec, ResolutionOp};
use crate::error::{param_err, Error, Result};
use crate::models::{Condition, Denoiser};
use crate::numerics::Real;
use crate::sampling::{GuidanceSpec, SamplerConfig};

/// How the low-resolution state is carried to the high-resolution chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Upsample the predicted clean image and re-noise with fresh noise.
    #[default]
    Coop,
    /// Upsample the noisy latent directly (baseline).
    Naive,
}

/// Starting state of chain B in latent fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentInit {
    /// `z'_T = z_T` coordinate for coordinate.
    #[default]
    Shared,
    /// `z'_T = E'(D(z_T))`: the same pixel-space noise seen through B's codec.
    Reencoded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FusionMode {
    /// Fuse two same-shape latent spaces with strength `d` on the bridged
    /// prediction.
    Latent {
        d: f64,
        #[serde(default)]
        init: LatentInit,
    },
    /// Run the low-res pair down to `t_low`, then hand off to the high-res
    /// pair.
    Resolution {
        t_low: usize,
        #[serde(default)]
        upsample: UpsampleMode,
    },
}

/// One model bound to its latent space and its own guidance.
pub struct FusionParty<'a, T: Real> {
    pub model: &'a dyn Denoiser<T>,
    pub codec: &'a LinearCodec<T>,
    pub cond: Condition,
    pub guidance: GuidanceSpec,
}

impl<T: Real> Clone for FusionParty<'_, T> {
    fn clone(&self) -> Self {
        Self { model: self.model, codec: self.codec, cond: self.cond, guidance: self.guidance }
    }
}

/// Two models, their codecs and the fusion rule. In resolution mode `a` is
/// the high-res pair and `b` the low-res pair.
#[derive(Clone)]
pub struct FusionPlan<'a, T: Real> {
    pub mode: FusionMode,
    pub a: FusionParty<'a, T>,
    pub b: FusionParty<'a, T>,
    pub sampler: SamplerConfig,
    /// Pixel upsampling from `b` to `a`; resolution mode only.
    pub up: Option<ResolutionOp>,
}

impl<T: Real> FusionPlan<'_, T> {
    pub fn validate(&self, schedule_steps: usize) -> Result<()> {
        self.a.guidance.validate()?;
        self.b.guidance.validate()?;
        if self.sampler.timesteps()[0] > schedule_steps {
            return Err(param_err!("sampler starts beyond T = {schedule_steps}"));
        }
        match self.mode {
            FusionMode::Latent { d, .. } => {
                check_strength(d)?;
                if self.a.codec.latent_shape() != self.b.codec.latent_shape() {
                    return Err(Error::Config(format!(
                        "latent fusion needs equal latent shapes, got {:?} and {:?}",
                        self.a.codec.latent_shape(),
                        self.b.codec.latent_shape()
                    )));
                }
            }
            FusionMode::Resolution { t_low, upsample } => {
                if t_low == 0 || t_low > schedule_steps {
                    return Err(param_err!("t_low = {t_low} must lie in [1, {schedule_steps}]"));
                }
                if !self.sampler.contains(t_low) {
                    return Err(param_err!("t_low = {t_low} is not on the sampler's timestep grid"));
                }
                let up = self.up.ok_or_else(|| Error::Config("resolution fusion needs an upsampling op".into()))?;
                let want = up.output_shape(self.b.codec.pixel_shape())?;
                if want != self.a.codec.pixel_shape() {
                    return Err(Error::Config(format!(
                        "upsampled low-res pixels {:?} do not match high-res pixels {:?}",
                        want,
                        self.a.codec.pixel_shape()
                    )));
                }
                if upsample == UpsampleMode::Naive {
                    let want = up.output_shape(self.b.codec.latent_shape())?;
                    if want != self.a.codec.latent_shape() {
                        return Err(Error::Config(format!(
                            "naive upsampling maps latent {:?} to {:?}, high-res latent is {:?}",
                            self.b.codec.latent_shape(),
                            want,
                            self.a.codec.latent_shape()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_strength(d: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&d) {
        return Err(param_err!("fusion strength d = {d} outside [0, 1]"));
    }
    Ok(())
}
