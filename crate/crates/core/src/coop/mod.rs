//! Running two pre-trained denoisers in one reverse process, bridged
//! across latent spaces or across resolutions.

mod latent;
mod plan;
mod resolution;

pub use latent::{bridge_eps, coop_latent_sample, fuse_eps, LatentFusionRun, CHAIN_B_STREAM};
pub use plan::{FusionMode, FusionParty, LatentInit, FusionPlan, UpsampleMode};
pub use resolution::{
    bridge_resolution, bridge_resolution_parts, coop_resolution_sample, ResolutionBridge, ResolutionFusionRun,
};
