//! Latent-space codecs and pixel-space resolution operators.

mod linear;
mod resample;

pub use linear::{CodecRecord, LinearCodec, ROUND_TRIP_TOL};
pub use linear::random_orthogonal_matrix;
pub use resample::{
    downsample, naive_upsample_latent, upsample_aligned, upsample_pixel, upsampled_site_variance, Alignment,
    ResampleMode, ResolutionOp,
};
