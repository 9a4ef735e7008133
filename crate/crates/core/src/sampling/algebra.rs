//! Forward noising and its inverses.
//!
//! `z = sqrt(a) x0 + sqrt(1 - a) eps`, solved for `x0` or for `eps`. The
//! `*_at` forms take the signal fraction `a` directly; the others look it
//! up from a schedule.

use crate::error::{Error, Result};
use crate::numerics::{Grid, NoiseSchedule, Real};

/// Below this signal fraction the clean-data estimate is not computed.
pub const MIN_ALPHA_BAR: f64 = 1e-12;

pub fn q_sample_at<T: Real>(x0: &Grid<T>, abar: T, eps: &Grid<T>) -> Result<Grid<T>> {
    x0.lincomb(abar.sqrt(), eps, (T::one() - abar).sqrt())?.ensure_finite("q_sample")
}

pub fn predict_x0_at<T: Real>(z_t: &Grid<T>, abar: T, eps: &Grid<T>) -> Result<Grid<T>> {
    if abar < T::of(MIN_ALPHA_BAR) {
        return Err(Error::NumericalDomain(format!("alpha_bar {abar} too small to recover x0")));
    }
    let inv = T::one() / abar.sqrt();
    z_t.lincomb(inv, eps, -(T::one() - abar).sqrt() * inv)?.ensure_finite("predict_x0")
}

pub fn invert_to_eps_at<T: Real>(z_t: &Grid<T>, abar: T, x0: &Grid<T>) -> Result<Grid<T>> {
    if abar >= T::one() {
        return Err(Error::NumericalDomain("no noise to recover at alpha_bar = 1".into()));
    }
    let inv = T::one() / (T::one() - abar).sqrt();
    z_t.lincomb(inv, x0, -abar.sqrt() * inv)?.ensure_finite("invert_to_eps")
}

/// Noises `x0` to timestep `t` (`t = 0` returns `x0`).
pub fn q_sample<T: Real>(x0: &Grid<T>, t: usize, eps: &Grid<T>, schedule: &NoiseSchedule<T>) -> Result<Grid<T>> {
    check_t(t, schedule)?;
    q_sample_at(x0, schedule.alpha_bar(t), eps)
}

/// Single-step clean-data estimate from a noise prediction.
pub fn predict_x0<T: Real>(z_t: &Grid<T>, t: usize, eps: &Grid<T>, schedule: &NoiseSchedule<T>) -> Result<Grid<T>> {
    check_t(t, schedule)?;
    predict_x0_at(z_t, schedule.alpha_bar(t), eps)
}

/// Noise prediction implied by a clean-data estimate at `z_t`.
pub fn invert_to_eps<T: Real>(z_t: &Grid<T>, t: usize, x0: &Grid<T>, schedule: &NoiseSchedule<T>) -> Result<Grid<T>> {
    check_t(t, schedule)?;
    invert_to_eps_at(z_t, schedule.alpha_bar(t), x0)
}

fn check_t<T: Real>(t: usize, schedule: &NoiseSchedule<T>) -> Result<()> {
    if t > schedule.steps() {
        return Err(Error::Parameter(format!("timestep {t} outside [0, {}]", schedule.steps())));
    }
    Ok(())
}
