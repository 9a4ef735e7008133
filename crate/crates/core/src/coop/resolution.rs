use crate::codecs::{naive_upsample_latent, LinearCodec, ResolutionOp};
use crate::coop::{FusionMode, FusionPlan, UpsampleMode};
use crate::error::{param_err, Result};
use crate::models::Denoiser;
use crate::numerics::{gaussian_noise, Grid, NoiseSchedule, Real, RngStream};
use crate::sampling::{
    denoise_from, guided_prediction, predict_x0, q_sample, sampler_step, SamplerConfig, Trajectory,
};

/// Pieces of one resolution bridge: `z_high = sqrt(a) clean + sqrt(1-a) noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionBridge<T = f64> {
    pub z_high: Grid<T>,
    /// Encoded, upsampled clean-image estimate.
    pub clean: Grid<T>,
    /// The fresh noise draw.
    pub noise: Grid<T>,
}

/// Carries a low-res noisy latent to the high-res latent space through its
/// clean-image estimate: predict, decode, upsample in pixel space, encode,
/// and re-noise with one fresh draw from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn bridge_resolution_parts<T: Real>(
    z_low: &Grid<T>,
    t: usize,
    eps_low: &Grid<T>,
    codec_low: &LinearCodec<T>,
    codec_high: &LinearCodec<T>,
    up: &ResolutionOp,
    schedule: &NoiseSchedule<T>,
    rng: &mut RngStream,
) -> Result<ResolutionBridge<T>> {
    schedule.check_timestep(t)?;
    z_low.expect_shape(codec_low.latent_shape())?;
    let x0_low = codec_low.decode(&predict_x0(z_low, t, eps_low, schedule)?)?;
    let clean = codec_high.encode(&up.apply(&x0_low)?)?;
    let noise = gaussian_noise(clean.shape(), rng)?;
    let z_high = q_sample(&clean, t, &noise, schedule)?;
    Ok(ResolutionBridge { z_high, clean, noise })
}

#[allow(clippy::too_many_arguments)]
pub fn bridge_resolution<T: Real>(
    z_low: &Grid<T>,
    t: usize,
    eps_low: &Grid<T>,
    codec_low: &LinearCodec<T>,
    codec_high: &LinearCodec<T>,
    up: &ResolutionOp,
    schedule: &NoiseSchedule<T>,
    rng: &mut RngStream,
) -> Result<Grid<T>> {
    bridge_resolution_parts(z_low, t, eps_low, codec_low, codec_high, up, schedule, rng).map(|b| b.z_high)
}

/// Result of a resolution-fusion run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionFusionRun<T = f64> {
    /// Decoded high-res output.
    pub x0: Grid<T>,
    /// Low-res states for `t > t_low` (recorded runs only).
    pub low: Vec<(usize, Grid<T>)>,
    /// Low-res latent at `t_low`.
    pub z_low: Grid<T>,
    /// High-res chain from `t_low` down.
    pub high: Trajectory<T>,
}

/// Low-res sampling down to `t_low`, a bridge, then high-res sampling to
/// the end. The run's generator is consumed in order: low-res start noise,
/// low-res steps, the bridge's fresh noise (coop mode), high-res steps.
pub fn coop_resolution_sample<T: Real>(
    plan: &FusionPlan<'_, T>,
    schedule: &NoiseSchedule<T>,
    rng: &mut RngStream,
) -> Result<ResolutionFusionRun<T>> {
    let FusionMode::Resolution { t_low, upsample } = plan.mode else {
        return Err(param_err!("coop_resolution_sample needs a resolution fusion plan"));
    };
    plan.validate(schedule.steps())?;
    let up = plan.up.expect("validated");
    let (high, low) = (&plan.a, &plan.b);
    let mut z = gaussian_noise(low.codec.latent_shape(), rng)?;
    let mut states = Vec::new();
    for (t, t_next) in plan.sampler.steps().take_while(|&(t, _)| t > t_low) {
        if plan.sampler.record {
            states.push((t, z.clone()));
        }
        let eps = guided_prediction(low.model, &z, t, &low.cond, &low.guidance)?;
        z = sampler_step(&z, t, t_next, &eps, schedule, plan.sampler.method, rng)?;
    }
    let z_high = match upsample {
        UpsampleMode::Coop => {
            let eps = guided_prediction(low.model, &z, t_low, &low.cond, &low.guidance)?;
            bridge_resolution(&z, t_low, &eps, low.codec, high.codec, &up, schedule, rng)?
        }
        UpsampleMode::Naive => naive_upsample_latent(&z, up.factor)?,
    };
    let tail: Vec<usize> = plan.sampler.timesteps().iter().copied().filter(|&t| t <= t_low).collect();
    let tail = SamplerConfig::new(plan.sampler.method, tail, schedule.steps())?.with_record(plan.sampler.record);
    let model: &dyn Denoiser<T> = high.model;
    let traj = denoise_from(z_high, |_| model, &high.cond, &high.guidance, &tail, schedule, rng)?;
    Ok(ResolutionFusionRun { x0: high.codec.decode(&traj.x0)?, low: states, z_low: z, high: traj })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coop::FusionParty;
    use crate::models::{Condition, GaussianMixture, GmDenoiser};
    use crate::sampling::{invert_to_eps, GuidanceSpec, SamplerMethod};

    #[test]
    fn noise_component_is_the_fresh_draw() {
        let sched = NoiseSchedule::standard();
        let mut rng = RngStream::new(17);
        let cl = LinearCodec::<f64>::random_orthogonal(vec![3, 3], 0.2, &mut rng).unwrap();
        let ch = LinearCodec::<f64>::random_orthogonal(vec![6, 6], 0.1, &mut rng).unwrap();
        let up = ResolutionOp::up(2).unwrap();
        let z: Grid<f64> = gaussian_noise(&[3, 3], &mut rng).unwrap();
        let e: Grid<f64> = gaussian_noise(&[3, 3], &mut rng).unwrap();
        let b = bridge_resolution_parts(&z, 400, &e, &cl, &ch, &up, &sched, &mut rng).unwrap();
        let recovered = invert_to_eps(&b.z_high, 400, &b.clean, &sched).unwrap();
        assert!(recovered.max_abs_diff(&b.noise).unwrap() < 1e-10);
    }

    #[test]
    fn constant_clean_image_with_identity_codecs() {
        let sched = NoiseSchedule::standard();
        let t = 300;
        let a = sched.alpha_bar(t);
        let id_lo = LinearCodec::<f64>::identity(vec![2, 2]).unwrap();
        let id_hi = LinearCodec::<f64>::identity(vec![4, 4]).unwrap();
        let c = 0.7;
        // z_low built so the clean estimate is the constant c
        let eps = Grid::filled(vec![2, 2], 0.3).unwrap();
        let z_low = crate::sampling::q_sample(&Grid::filled(vec![2, 2], c).unwrap(), t, &eps, &sched).unwrap();
        let up = ResolutionOp::up(2).unwrap();
        let mut r1 = RngStream::new(3);
        let out = bridge_resolution(&z_low, t, &eps, &id_lo, &id_hi, &up, &sched, &mut r1).unwrap();
        let fresh: Grid<f64> = gaussian_noise(&[4, 4], &mut RngStream::new(3)).unwrap();
        for (o, f) in out.data().iter().zip(fresh.data()) {
            assert!((o - (a.sqrt() * c + (1.0 - a).sqrt() * f)).abs() < 1e-12);
        }
    }

    fn plan<'a>(
        hi: (&'a GmDenoiser<f64>, &'a LinearCodec<f64>),
        lo: (&'a GmDenoiser<f64>, &'a LinearCodec<f64>),
        t_low: usize,
        upsample: UpsampleMode,
        sampler: SamplerConfig,
    ) -> FusionPlan<'a, f64> {
        let party = |(m, c): (&'a GmDenoiser<f64>, &'a LinearCodec<f64>)| FusionParty {
            model: m as &dyn Denoiser<f64>,
            codec: c,
            cond: Condition::Unconditional,
            guidance: GuidanceSpec::default(),
        };
        FusionPlan {
            mode: FusionMode::Resolution { t_low, upsample },
            a: party(hi),
            b: party(lo),
            sampler,
            up: Some(ResolutionOp::up(2).unwrap()),
        }
    }

    #[test]
    fn runs_at_every_legal_handoff_and_rejects_off_grid() {
        let sched = NoiseSchedule::standard();
        let lo_mean = Grid::from_fn2(2, 2, |i, j| (i + 2 * j) as f64 * 0.5).unwrap();
        let hi_mean = crate::codecs::upsample_pixel(&lo_mean, 2).unwrap();
        let lo = GmDenoiser::new(GaussianMixture::single(lo_mean, 0.2).unwrap(), sched.clone());
        let hi = GmDenoiser::new(GaussianMixture::single(hi_mean, 0.2).unwrap(), sched.clone());
        let cl = LinearCodec::<f64>::identity(vec![2, 2]).unwrap();
        let ch = LinearCodec::<f64>::identity(vec![4, 4]).unwrap();
        let sampler = SamplerConfig::evenly_spaced(1000, 10, SamplerMethod::default(), &[]).unwrap();
        for t_low in [1000, 500, 100] {
            for mode in [UpsampleMode::Coop, UpsampleMode::Naive] {
                let p = plan((&hi, &ch), (&lo, &cl), t_low, mode, sampler.clone());
                let run = coop_resolution_sample(&p, &sched, &mut RngStream::new(1)).unwrap();
                assert_eq!(run.x0.shape(), &[4, 4]);
                assert_eq!(run.high.states[0].0, t_low);
                assert!(run.low.iter().all(|(t, _)| *t > t_low));
                let again = coop_resolution_sample(&p, &sched, &mut RngStream::new(1)).unwrap();
                assert_eq!(run, again);
            }
        }
        let p = plan((&hi, &ch), (&lo, &cl), 450, UpsampleMode::Coop, sampler.clone());
        assert!(coop_resolution_sample(&p, &sched, &mut RngStream::new(1)).is_err());
        let p = plan((&hi, &ch), (&lo, &cl), 0, UpsampleMode::Coop, sampler);
        assert!(coop_resolution_sample(&p, &sched, &mut RngStream::new(1)).is_err());
    }
}
