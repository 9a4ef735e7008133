use serde::{Deserialize, Serialize};

use crate::codecs::downsample;
use crate::error::{param_err, Error, Result};
use crate::models::{Condition, DataSource, MlpDenoiser, TrainExample};
use crate::numerics::{gaussian_noise, NoiseSchedule, Real, RngStream};
use crate::sampling::q_sample;

/// Which resolution the generator sees during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResolutionPolicy {
    /// Items are used as drawn.
    #[default]
    Native,
    /// Items come from a pool that mixes high-res and upsampled low-res
    /// images (see [`crate::models::make_structure_pool`]); used as drawn.
    UpscaleLowResIntoPool,
    /// Items are average-pooled by `factor` before use.
    TrainAtLowRes { factor: usize },
}

/// Settings for one generator's training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    /// Inclusive timestep range sampled uniformly during training.
    pub t_range: (usize, usize),
    #[serde(default)]
    pub resolution_policy: ResolutionPolicy,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Probability of replacing the condition by `Unconditional`.
    #[serde(default)]
    pub cond_dropout: f64,
}

impl TrainSpec {
    pub fn validate(&self, schedule_steps: usize) -> Result<()> {
        let (lo, hi) = self.t_range;
        if lo == 0 || lo > hi || hi > schedule_steps {
            return Err(param_err!("t_range [{lo}, {hi}] must be nonempty and within [1, {schedule_steps}]"));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(param_err!("steps and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(param_err!("learning_rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(param_err!("cond_dropout must lie in [0, 1]"));
        }
        if let ResolutionPolicy::TrainAtLowRes { factor } = self.resolution_policy {
            if factor < 2 {
                return Err(param_err!("low-res training factor must be >= 2"));
            }
        }
        Ok(())
    }
}

/// Per-step training losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    /// Trailing moving average over up to `window` steps.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.losses.len());
        let mut acc = 0.0;
        for (i, &l) in self.losses.iter().enumerate() {
            acc += l;
            if i >= window {
                acc -= self.losses[i - window];
            }
            out.push(acc / (i + 1).min(window) as f64);
        }
        out
    }
}

/// Plain SGD on the noise-regression objective with `t ~ U(t_range)`.
pub fn train_denoiser<T: Real>(
    mut model: MlpDenoiser<T>,
    data: &dyn DataSource<T>,
    spec: &TrainSpec,
    schedule: &NoiseSchedule<T>,
    rng: &mut RngStream,
) -> Result<(MlpDenoiser<T>, LossCurve)> {
    spec.validate(schedule.steps())?;
    if model.config().schedule_steps != schedule.steps() {
        return Err(param_err!(
            "model expects T = {}, schedule has T = {}",
            model.config().schedule_steps,
            schedule.steps()
        ));
    }
    let lr = T::of(spec.learning_rate);
    let mut curve = LossCurve { losses: Vec::with_capacity(spec.steps) };
    let mut batch = Vec::with_capacity(spec.batch_size);
    for step in 0..spec.steps {
        batch.clear();
        for _ in 0..spec.batch_size {
            let (x0, mut cond) = data.draw(rng);
            let x0 = match spec.resolution_policy {
                ResolutionPolicy::TrainAtLowRes { factor } => downsample(&x0, factor)?,
                _ => x0,
            };
            let t = rng.range_inclusive(spec.t_range.0, spec.t_range.1);
            if spec.cond_dropout > 0.0 && rng.uniform() < spec.cond_dropout {
                cond = Condition::Unconditional;
            }
            let eps = gaussian_noise(x0.shape(), rng)?;
            let z_t = q_sample(&x0, t, &eps, schedule)?;
            batch.push(TrainExample { z_t, t, cond, eps });
        }
        let (loss, grads) = model.loss_and_gradients(&batch)?;
        let loss = loss.to_f64_lossy();
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training { step, reason: format!("loss became {loss}") });
        }
        for (p, g) in model.params_mut().iter_mut().zip(&grads) {
            *p -= lr * *g;
        }
        curve.losses.push(loss);
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianMixture, InputLayout, LabelSet, MixtureSource, MlpConfig};
    use crate::numerics::{Grid, ScheduleKind};
    use crate::sampling::predict_x0;
    use crate::Denoiser;

    fn config(steps: usize) -> MlpConfig {
        MlpConfig {
            layout: InputLayout::Dense { shape: vec![2] },
            hidden: vec![32, 32],
            time_embed_dim: 8,
            labels: LabelSet::default(),
            resolutions: vec![],
            res_embed_dim: 0,
            skip: false,
            schedule_steps: steps,
        }
    }

    fn spec(t_range: (usize, usize), steps: usize, seed: u64) -> TrainSpec {
        TrainSpec {
            t_range,
            resolution_policy: ResolutionPolicy::Native,
            steps,
            learning_rate: 0.05,
            batch_size: 64,
            seed,
            cond_dropout: 0.0,
        }
    }

    #[test]
    fn point_mass_structure_model_predicts_its_mean() {
        // short schedule so that x0 = (z - sqrt(1-a) eps) / sqrt(a) at t = T
        // is not dominated by the 1/sqrt(a) amplification
        let sched = NoiseSchedule::<f64>::build(100, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let origin = Grid::from_vec(vec![0.0, 0.0]).unwrap();
        let data = MixtureSource { mixture: GaussianMixture::single(origin, 1e-8).unwrap(), labelled: false };
        let mut rng = RngStream::new(5);
        let model = MlpDenoiser::new(config(100), &mut rng).unwrap();
        let spec = TrainSpec { learning_rate: 0.2, ..spec((51, 100), 20000, 5) };
        let (model, _) = train_denoiser(model, &data, &spec, &sched, &mut rng).unwrap();
        let sd = (1.0 - sched.alpha_bar(100)).sqrt();
        let mut worst = 0.0f64;
        for _ in 0..50 {
            // z_T drawn from its true marginal N(0, (1 - abar_T) I)
            let z = crate::numerics::gaussian_noise::<f64>(&[2], &mut rng).unwrap().scale(sd);
            let eps = model.predict_eps(&z, 100, &Condition::Unconditional).unwrap();
            let x0 = predict_x0(&z, 100, &eps, &sched).unwrap();
            worst = worst.max(x0.norm2());
        }
        assert!(worst < 0.1, "implied x0 norm {worst}");
    }

    #[test]
    fn loss_decreases_and_training_is_deterministic() {
        let sched = NoiseSchedule::standard();
        let g = |a: f64, b: f64| Grid::from_vec(vec![a, b]).unwrap();
        let gm = GaussianMixture::new(vec![0.5, 0.5], vec![g(-2.0, 1.0), g(2.0, -1.0)], vec![0.1, 0.1]).unwrap();
        let data = MixtureSource { mixture: gm, labelled: false };
        let run = || {
            let mut rng = RngStream::new(77);
            let model = MlpDenoiser::new(config(1000), &mut rng).unwrap();
            train_denoiser(model, &data, &spec((1, 1000), 600, 77), &sched, &mut rng).unwrap()
        };
        let (m1, curve) = run();
        let smooth = curve.smoothed(50);
        assert!(smooth.last().unwrap() < &smooth[49], "{} vs {}", smooth.last().unwrap(), smooth[49]);
        let (m2, _) = run();
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn divergence_reports_step() {
        let sched = NoiseSchedule::standard();
        let data = MixtureSource {
            mixture: GaussianMixture::single(Grid::from_vec(vec![1e3, -1e3]).unwrap(), 1.0).unwrap(),
            labelled: false,
        };
        let mut rng = RngStream::new(1);
        let model = MlpDenoiser::new(config(1000), &mut rng).unwrap();
        let mut s = spec((1, 1000), 200, 1);
        s.learning_rate = 1e6;
        match train_denoiser(model, &data, &s, &sched, &mut rng) {
            Err(Error::Training { step, .. }) => assert!(step < 200),
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn spec_validation() {
        assert!(spec((0, 10), 1, 0).validate(1000).is_err());
        assert!(spec((10, 5), 1, 0).validate(1000).is_err());
        assert!(spec((1, 1001), 1, 0).validate(1000).is_err());
        assert!(spec((1, 1000), 1, 0).validate(1000).is_ok());
    }
}
