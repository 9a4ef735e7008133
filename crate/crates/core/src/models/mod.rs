//! Noise predictors: the analytic mixture oracle, the trainable MLP, and
//! the training regimes for structure/texture generators.

mod cov_mixture;
mod data;
mod denoiser;
pub mod io;
mod mixture;
mod mlp;
mod train;

pub use cov_mixture::{CovGmDenoiser, CovMixture};
pub use data::{make_structure_pool, DataSource, Dataset, MixtureSource};
pub use denoiser::{Condition, Denoiser, GmDenoiser, LabelSet};
pub use mixture::{gm_predict_eps, GaussianMixture, MixtureRecord};
pub use mlp::{
    mlp_gradients, resolution_embedding, time_embedding, Activations, InputLayout, Mlp, MlpConfig, MlpDenoiser,
    TrainExample,
};
pub use train::{train_denoiser, LossCurve, ResolutionPolicy, TrainSpec};
