//! Distribution metrics: Gaussian-Fréchet distance on raw coordinates,
//! lag-1 whiteness, and mixture occupancy.

mod report;
mod stats;

pub use report::{metrics_csv, MetricRow};
pub use stats::{
    fit_gaussian, fit_gaussian_rows, gaussian_frechet, lag1_autocorr, mixture_occupancy, GaussianSummary,
};
