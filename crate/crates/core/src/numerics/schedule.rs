use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::numerics::Real;

/// Shape of the per-step noise variance sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

/// Cumulative signal fractions `alpha_bar[0..=T]` of the forward process.
///
/// `alpha_bar[0] == 1` and the sequence is strictly decreasing and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T = f64> {
    alpha_bar: Vec<T>,
}

impl<T: Real> NoiseSchedule<T> {
    /// Linear betas from `beta_min` (step 1) to `beta_max` (step `T`).
    pub fn build(steps: usize, beta_min: f64, beta_max: f64, kind: ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(param_err!("schedule needs at least one step"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(param_err!(
                "beta range must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            ));
        }
        let ScheduleKind::Linear = kind;
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0f64);
        let mut acc = 1.0f64;
        for s in 1..=steps {
            let beta = if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * (s - 1) as f64 / (steps - 1) as f64
            };
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar.into_iter().map(T::of).collect())
    }

    /// Validates an explicit `alpha_bar` table (index 0 must be exactly 1).
    pub fn from_alpha_bar(alpha_bar: Vec<T>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(param_err!("alpha_bar needs entries for t = 0..T with T >= 1"));
        }
        if alpha_bar[0] != T::one() {
            return Err(param_err!("alpha_bar[0] must be exactly 1"));
        }
        for t in 1..alpha_bar.len() {
            let (prev, cur) = (alpha_bar[t - 1], alpha_bar[t]);
            if !(cur > T::zero() && cur < prev) {
                return Err(param_err!(
                    "alpha_bar must be positive and strictly decreasing (t = {t}: {prev} -> {cur})"
                ));
            }
        }
        Ok(Self { alpha_bar })
    }

    /// Total number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    /// `alpha_bar[t]`; panics when `t > T`.
    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bar
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(param_err!("timestep {t} outside [1, {}]", self.steps()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> NoiseSchedule<U> {
        NoiseSchedule { alpha_bar: self.alpha_bar.iter().map(|v| U::of(v.to_f64_lossy())).collect() }
    }
}

impl NoiseSchedule<f64> {
    /// `T = 1000`, betas linear in `[1e-4, 0.02]`.
    pub fn standard() -> Self {
        Self::build(1000, 1e-4, 0.02, ScheduleKind::Linear).expect("default schedule is valid")
    }
}
