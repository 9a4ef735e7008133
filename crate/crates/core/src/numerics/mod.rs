//! Scalars, grids, noise schedules and seeded randomness.

mod grid;
mod rng;
mod scalar;
mod schedule;

pub use grid::Grid;
pub use rng::{gaussian_noise, RngStream};
pub use scalar::Real;
pub use schedule::{NoiseSchedule, ScheduleKind};
