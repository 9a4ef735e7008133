//! Forward/reverse diffusion algebra, samplers, guidance and the
//! single-model and two-stage sampling loops.

mod algebra;
mod guidance;
mod pipeline;
mod sampler;

pub use algebra::{invert_to_eps, invert_to_eps_at, predict_x0, predict_x0_at, q_sample, q_sample_at, MIN_ALPHA_BAR};
pub use guidance::{guided_eps, guided_prediction, GuidanceSpec};
pub use pipeline::{check_boundary, denoise_from, run_chains, sample_loop, time_decoupled_sample, Trajectory};
pub use sampler::{ddim_update, sampler_step, SamplerConfig, SamplerMethod};
