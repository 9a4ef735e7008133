use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::numerics::{gaussian_noise, Grid, NoiseSchedule, Real, RngStream};
use crate::sampling::predict_x0_at;

/// Reverse-step rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerMethod {
    /// Deterministic for `eta = 0`; `eta = 1` matches the ancestral
    /// posterior variance.
    Ddim { eta: f64 },
    /// Draws from the Gaussian posterior `q(z_next | z_t, x0_hat)`.
    Ancestral,
}

impl Default for SamplerMethod {
    fn default() -> Self {
        Self::Ddim { eta: 0.0 }
    }
}

/// Sampling method plus the strictly decreasing timesteps to query; the
/// step after the last listed timestep lands on `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    timesteps: Vec<usize>,
    /// Keep every intermediate latent in the trajectory.
    pub record: bool,
}

impl SamplerConfig {
    /// `num_steps` evenly spaced timesteps from `T` down, with every entry
    /// of `boundaries` (inside `[1, T]`) forced onto the grid.
    pub fn evenly_spaced(
        schedule_steps: usize,
        num_steps: usize,
        method: SamplerMethod,
        boundaries: &[usize],
    ) -> Result<Self> {
        if num_steps == 0 || num_steps > schedule_steps {
            return Err(param_err!("num_steps must be in [1, {schedule_steps}], got {num_steps}"));
        }
        let mut ts: Vec<usize> = (0..num_steps)
            .map(|i| {
                let v = (schedule_steps as f64 * (num_steps - i) as f64 / num_steps as f64).round() as usize;
                v.clamp(1, schedule_steps)
            })
            .collect();
        for &b in boundaries {
            if b > schedule_steps {
                return Err(param_err!("boundary {b} exceeds T = {schedule_steps}"));
            }
            if b > 0 && !ts.contains(&b) {
                ts.push(b);
            }
        }
        ts.sort_unstable_by(|a, b| b.cmp(a));
        ts.dedup();
        Self::new(method, ts, schedule_steps)
    }

    pub fn new(method: SamplerMethod, timesteps: Vec<usize>, schedule_steps: usize) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(param_err!("timestep sequence is empty"));
        }
        if timesteps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(param_err!("timesteps must be strictly decreasing"));
        }
        if timesteps[0] > schedule_steps || *timesteps.last().unwrap() == 0 {
            return Err(param_err!("timesteps must lie in [1, {schedule_steps}]"));
        }
        if let SamplerMethod::Ddim { eta } = method {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(param_err!("ddim eta must be >= 0, got {eta}"));
            }
        }
        Ok(Self { method, timesteps, record: true })
    }

    pub fn with_record(mut self, record: bool) -> Self {
        self.record = record;
        self
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// `(t, t_next)` pairs, ending with `(t_last, 0)`.
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.timesteps
            .iter()
            .enumerate()
            .map(move |(i, &t)| (t, self.timesteps.get(i + 1).copied().unwrap_or(0)))
    }

    pub fn contains(&self, t: usize) -> bool {
        self.timesteps.contains(&t)
    }

    pub fn is_stochastic(&self) -> bool {
        match self.method {
            SamplerMethod::Ddim { eta } => eta > 0.0,
            SamplerMethod::Ancestral => true,
        }
    }
}

/// DDIM update between explicit signal fractions, with extra noise
/// standard deviation `sigma` (`noise` must be given when `sigma > 0`).
pub fn ddim_update<T: Real>(
    z_t: &Grid<T>,
    eps: &Grid<T>,
    abar_t: T,
    abar_next: T,
    sigma: T,
    noise: Option<&Grid<T>>,
) -> Result<Grid<T>> {
    let x0 = predict_x0_at(z_t, abar_t, eps)?;
    let dir = (T::one() - abar_next - sigma * sigma).max(T::zero()).sqrt();
    let mut z = x0.lincomb(abar_next.sqrt(), eps, dir)?;
    if sigma > T::zero() {
        let n = noise.ok_or_else(|| param_err!("stochastic step needs a noise draw"))?;
        z = z.lincomb(T::one(), n, sigma)?;
    }
    z.ensure_finite("ddim step")
}

/// One reverse step `t -> t_next`. Draws from `rng` only for stochastic
/// methods with `t_next > 0`; the step into `t = 0` returns the clean-data
/// estimate.
pub fn sampler_step<T: Real>(
    z_t: &Grid<T>,
    t: usize,
    t_next: usize,
    eps: &Grid<T>,
    schedule: &NoiseSchedule<T>,
    method: SamplerMethod,
    rng: &mut RngStream,
) -> Result<Grid<T>> {
    if t <= t_next {
        return Err(param_err!("reverse step needs t > t_next, got {t} -> {t_next}"));
    }
    schedule.check_timestep(t)?;
    let abar_t = schedule.alpha_bar(t);
    if t_next == 0 {
        return predict_x0_at(z_t, abar_t, eps);
    }
    let abar_next = schedule.alpha_bar(t_next);
    match method {
        SamplerMethod::Ddim { eta } => {
            let eta = T::of(eta);
            if eta == T::zero() {
                return ddim_update(z_t, eps, abar_t, abar_next, T::zero(), None);
            }
            let sigma = eta
                * ((T::one() - abar_next) / (T::one() - abar_t) * (T::one() - abar_t / abar_next)).sqrt();
            let noise = gaussian_noise(z_t.shape(), rng)?;
            ddim_update(z_t, eps, abar_t, abar_next, sigma, Some(&noise))
        }
        SamplerMethod::Ancestral => {
            let x0 = predict_x0_at(z_t, abar_t, eps)?;
            let alpha = abar_t / abar_next;
            let beta = T::one() - alpha;
            let denom = T::one() - abar_t;
            let c_x0 = abar_next.sqrt() * beta / denom;
            let c_z = alpha.sqrt() * (T::one() - abar_next) / denom;
            let var = (T::one() - abar_next) / denom * beta;
            let noise = gaussian_noise(z_t.shape(), rng)?;
            x0.lincomb(c_x0, z_t, c_z)?.lincomb(T::one(), &noise, var.sqrt())?.ensure_finite("ancestral step")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Grid<f64> {
        Grid::from_vec(vec![v]).unwrap()
    }

    #[test]
    fn unchanged_when_schedule_does_not_move() {
        let z = s(0.8);
        let out = ddim_update(&z, &s(0.3), 0.4, 0.4, 0.0, None).unwrap();
        assert!((out.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn worked_ddim_value() {
        // z_t built from x0 = 2, eps = 1 at abar = 0.25, stepped to abar = 0.5
        let z = crate::sampling::q_sample_at(&s(2.0), 0.25, &s(1.0)).unwrap();
        let out = ddim_update(&z, &s(1.0), 0.25, 0.5, 0.0, None).unwrap();
        assert!((out.data()[0] - 2.1213203435596424).abs() < 1e-12);
    }

    #[test]
    fn final_step_returns_x0_and_order_is_checked() {
        let sched = NoiseSchedule::standard();
        let mut rng = RngStream::new(0);
        let z = s(0.5);
        let eps = s(0.1);
        let out = sampler_step(&z, 20, 0, &eps, &sched, SamplerMethod::Ancestral, &mut rng).unwrap();
        assert_eq!(out, crate::sampling::predict_x0(&z, 20, &eps, &sched).unwrap());
        assert!(sampler_step(&z, 20, 20, &eps, &sched, SamplerMethod::default(), &mut rng).is_err());
        assert!(sampler_step(&z, 10, 20, &eps, &sched, SamplerMethod::default(), &mut rng).is_err());
    }

    #[test]
    fn ancestral_matches_ddim_eta_one_in_distribution() {
        // same mean and variance: check the coefficients on x0, z and noise
        let sched = NoiseSchedule::standard();
        let (t, tn) = (600, 550);
        let z = s(0.9);
        let eps = s(-0.4);
        let mut r1 = RngStream::new(3);
        let mut r2 = RngStream::new(3);
        let a = sampler_step(&z, t, tn, &eps, &sched, SamplerMethod::Ancestral, &mut r1).unwrap();
        let b = sampler_step(&z, t, tn, &eps, &sched, SamplerMethod::Ddim { eta: 1.0 }, &mut r2).unwrap();
        assert!((a.data()[0] - b.data()[0]).abs() < 1e-12);
    }

    #[test]
    fn evenly_spaced_grid() {
        let c = SamplerConfig::evenly_spaced(1000, 50, SamplerMethod::default(), &[]).unwrap();
        assert_eq!(c.timesteps().len(), 50);
        assert_eq!(c.timesteps()[0], 1000);
        assert_eq!(*c.timesteps().last().unwrap(), 20);
        assert!(c.contains(500));
        let c = SamplerConfig::evenly_spaced(1000, 7, SamplerMethod::default(), &[500]).unwrap();
        assert!(c.contains(500) && c.contains(1000));
        let full = SamplerConfig::evenly_spaced(1000, 1000, SamplerMethod::default(), &[]).unwrap();
        assert_eq!(full.timesteps(), (1..=1000).rev().collect::<Vec<_>>().as_slice());
        assert_eq!(full.steps().last(), Some((1, 0)));
        assert!(SamplerConfig::new(SamplerMethod::default(), vec![5, 5], 10).is_err());
        assert!(SamplerConfig::new(SamplerMethod::default(), vec![11, 5], 10).is_err());
        assert!(SamplerConfig::new(SamplerMethod::Ddim { eta: -1.0 }, vec![5], 10).is_err());
    }
}
