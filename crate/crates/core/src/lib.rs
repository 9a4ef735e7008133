//! Diffusion sampling and multi-model fusion on desk-scale problems.
//!
//! The numeric core is generic over the scalar type (`f32` or `f64`, see
//! [`Real`]); the `*64` aliases below fix it to `f64`, which every
//! command-line path uses.

pub mod cli;
pub mod codecs;
pub mod coop;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod sampling;

pub use error::{Error, Result};
pub use models::{Condition, Denoiser, GaussianMixture, GmDenoiser, MlpDenoiser};
pub use numerics::{gaussian_noise, Grid, NoiseSchedule, Real, RngStream, ScheduleKind};
pub use sampling::{GuidanceSpec, SamplerConfig, SamplerMethod, Trajectory};

pub type Grid64 = Grid<f64>;
pub type Grid32 = Grid<f32>;
pub type Schedule64 = NoiseSchedule<f64>;
pub type Schedule32 = NoiseSchedule<f32>;
pub type Codec64 = codecs::LinearCodec<f64>;
pub type Mixture64 = GaussianMixture<f64>;
pub type Mlp64 = MlpDenoiser<f64>;
