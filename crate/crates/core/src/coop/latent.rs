use crate::codecs::LinearCodec;
use crate::coop::plan::check_strength;
use crate::coop::{FusionMode, FusionPlan, LatentInit};
use crate::error::{param_err, Result};
use crate::numerics::{gaussian_noise, Grid, NoiseSchedule, Real, RngStream};
use crate::sampling::{guided_prediction, invert_to_eps, predict_x0, sampler_step, Trajectory};

/// Stream index of chain B's generator relative to the run's generator.
pub const CHAIN_B_STREAM: u64 = 0xB;

/// Re-expresses a noise prediction made at `z_src` in the destination space
/// at `z_dst`: predict the clean latent, decode, re-encode, and invert.
pub fn bridge_eps<T: Real>(
    eps_src: &Grid<T>,
    z_src: &Grid<T>,
    z_dst: &Grid<T>,
    codec_src: &LinearCodec<T>,
    codec_dst: &LinearCodec<T>,
    t: usize,
    schedule: &NoiseSchedule<T>,
) -> Result<Grid<T>> {
    if t == 0 {
        return Err(crate::Error::NumericalDomain("cannot bridge at t = 0".into()));
    }
    z_src.expect_shape(codec_src.latent_shape())?;
    z_dst.expect_shape(codec_dst.latent_shape())?;
    let x0_src = predict_x0(z_src, t, eps_src, schedule)?;
    let x0_dst = codec_dst.encode(&codec_src.decode(&x0_src)?)?;
    invert_to_eps(z_dst, t, &x0_dst, schedule)
}

/// `d * bridged + (1 - d) * native`; the endpoints return an input exactly.
pub fn fuse_eps<T: Real>(eps_bridged: &Grid<T>, eps_native: &Grid<T>, d: f64) -> Result<Grid<T>> {
    check_strength(d)?;
    eps_bridged.same_shape(eps_native)?;
    if d == 0.0 {
        return Ok(eps_native.clone());
    }
    if d == 1.0 {
        return Ok(eps_bridged.clone());
    }
    let d = T::of(d);
    eps_bridged.lincomb(d, eps_native, T::one() - d)
}

/// Result of a latent-fusion run.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFusionRun<T = f64> {
    /// Decoded output of chain A.
    pub x0: Grid<T>,
    pub chain_a: Trajectory<T>,
    pub chain_b: Trajectory<T>,
}

/// Lock-step sampling of two chains started from the same noise draw. Chain
/// A steps with the fused prediction; chain B steps with that prediction
/// bridged back into its own space.
///
/// Chain A draws from `rng` in the same order as [`crate::sampling::sample_loop`];
/// chain B draws from `rng.split(CHAIN_B_STREAM)`.
pub fn coop_latent_sample<T: Real>(
    plan: &FusionPlan<'_, T>,
    schedule: &NoiseSchedule<T>,
    rng: &mut RngStream,
) -> Result<LatentFusionRun<T>> {
    let FusionMode::Latent { d, init } = plan.mode else {
        return Err(param_err!("coop_latent_sample needs a latent fusion plan"));
    };
    plan.validate(schedule.steps())?;
    let (a, b) = (&plan.a, &plan.b);
    let mut rng_b = rng.split(CHAIN_B_STREAM);
    let mut z = gaussian_noise(a.codec.latent_shape(), rng)?;
    let mut zb = match init {
        LatentInit::Shared => z.clone(),
        LatentInit::Reencoded => b.codec.encode(&a.codec.decode(&z)?)?,
    };
    let (mut sa, mut sb) = (Vec::new(), Vec::new());
    for (t, t_next) in plan.sampler.steps() {
        if plan.sampler.record {
            sa.push((t, z.clone()));
            sb.push((t, zb.clone()));
        }
        let eps_a = guided_prediction(a.model, &z, t, &a.cond, &a.guidance)?;
        let eps_fuse = if d == 0.0 {
            eps_a
        } else {
            let eps_b = guided_prediction(b.model, &zb, t, &b.cond, &b.guidance)?;
            let bridged = bridge_eps(&eps_b, &zb, &z, b.codec, a.codec, t, schedule)?;
            fuse_eps(&bridged, &eps_a, d)?
        };
        let eps_fuse_b = bridge_eps(&eps_fuse, &z, &zb, a.codec, b.codec, t, schedule)?;
        z = sampler_step(&z, t, t_next, &eps_fuse, schedule, plan.sampler.method, rng)?;
        zb = sampler_step(&zb, t, t_next, &eps_fuse_b, schedule, plan.sampler.method, &mut rng_b)?;
    }
    Ok(LatentFusionRun {
        x0: a.codec.decode(&z)?,
        chain_a: Trajectory { states: sa, x0: z },
        chain_b: Trajectory { states: sb, x0: zb },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coop::FusionParty;
    use crate::models::{Condition, GaussianMixture, GmDenoiser};
    use crate::sampling::{sample_loop, GuidanceSpec, SamplerConfig, SamplerMethod};

    fn g(v: &[f64]) -> Grid<f64> {
        Grid::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn same_space_bridge_is_a_no_op() {
        let sched = NoiseSchedule::standard();
        let id = LinearCodec::<f64>::identity(vec![3]).unwrap();
        let mut rng = RngStream::new(2);
        for t in [1, 10, 500, 999, 1000] {
            let z: Grid<f64> = gaussian_noise(&[3], &mut rng).unwrap();
            let e: Grid<f64> = gaussian_noise(&[3], &mut rng).unwrap();
            let out = bridge_eps(&e, &z, &z, &id, &id, t, &sched).unwrap();
            assert!(out.max_abs_diff(&e).unwrap() < 1e-10, "t = {t}");
        }
        assert!(bridge_eps(&g(&[1.0; 3]), &g(&[1.0; 3]), &g(&[1.0; 3]), &id, &id, 0, &sched).is_err());
    }

    #[test]
    fn scale_codec_bridge_by_hand() {
        // abar = 0.25 at t = 1 of a hand-built schedule
        let sched = NoiseSchedule::from_alpha_bar(vec![1.0, 0.25, 0.1]).unwrap();
        let s2 = LinearCodec::<f64>::scaled(vec![1], 2.0).unwrap();
        let id = LinearCodec::<f64>::identity(vec![1]).unwrap();
        let z_src = g(&[1.8]);
        let eps = g(&[0.6]);
        let z_dst = s2.decode(&z_src).unwrap(); // 0.9
        // x0_src = (1.8 - sqrt(0.75) 0.6) / 0.5; pixel = x0_src / 2; eps = (0.9 - 0.5 pixel) / sqrt(0.75)
        let x0_src = (1.8 - 0.75f64.sqrt() * 0.6) / 0.5;
        let expected = (0.9 - 0.5 * (x0_src / 2.0)) / 0.75f64.sqrt();
        let out = bridge_eps(&eps, &z_src, &z_dst, &s2, &id, 1, &sched).unwrap();
        assert!((out.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn bridged_prediction_reproduces_the_clean_estimate() {
        let sched = NoiseSchedule::standard();
        let mut rng = RngStream::new(8);
        let ca = LinearCodec::<f64>::random_orthogonal(vec![2, 2], 0.3, &mut rng).unwrap();
        let cb = LinearCodec::<f64>::random_orthogonal(vec![2, 2], 0.0, &mut rng).unwrap();
        for t in [3, 200, 700] {
            let zs: Grid<f64> = gaussian_noise(&[2, 2], &mut rng).unwrap();
            let zd: Grid<f64> = gaussian_noise(&[2, 2], &mut rng).unwrap();
            let e: Grid<f64> = gaussian_noise(&[2, 2], &mut rng).unwrap();
            let out = bridge_eps(&e, &zs, &zd, &ca, &cb, t, &sched).unwrap();
            let lhs = predict_x0(&zd, t, &out, &sched).unwrap();
            let rhs = cb.encode(&ca.decode(&predict_x0(&zs, t, &e, &sched).unwrap()).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
            let back = bridge_eps(&out, &zd, &zs, &cb, &ca, t, &sched).unwrap();
            assert!(back.max_abs_diff(&e).unwrap() < 1e-9);
        }
    }

    #[test]
    fn fuse_endpoints_and_midpoint() {
        let one = g(&[1.0, 1.0]);
        let zero = g(&[0.0, 0.0]);
        assert_eq!(fuse_eps(&one, &zero, 0.0).unwrap(), zero);
        assert_eq!(fuse_eps(&one, &zero, 1.0).unwrap(), one);
        assert_eq!(fuse_eps(&one, &zero, 0.5).unwrap().data(), &[0.5, 0.5]);
        assert!(fuse_eps(&one, &zero, 1.5).is_err());
        assert!(fuse_eps(&one, &zero, -0.1).is_err());
    }

    #[test]
    fn zero_strength_matches_single_model_and_shapes_are_checked() {
        let sched = NoiseSchedule::standard();
        let mut rng = RngStream::new(31);
        let gm = GaussianMixture::new(vec![0.4, 0.6], vec![g(&[2.0, 0.0]), g(&[-1.0, 1.0])], vec![0.2, 0.5]).unwrap();
        let ca = LinearCodec::<f64>::random_orthogonal(vec![2], 0.0, &mut rng).unwrap();
        let cb = LinearCodec::<f64>::random_orthogonal(vec![2], 0.0, &mut rng).unwrap();
        let ma = GmDenoiser::new(gm.push_forward(&ca).unwrap(), sched.clone());
        let mb = GmDenoiser::new(gm.push_forward(&cb).unwrap(), sched.clone());
        let sampler = SamplerConfig::evenly_spaced(1000, 25, SamplerMethod::Ddim { eta: 1.0 }, &[]).unwrap();
        let plan = FusionPlan {
            mode: FusionMode::Latent { d: 0.0, init: LatentInit::Shared },
            a: FusionParty { model: &ma, codec: &ca, cond: Condition::Unconditional, guidance: GuidanceSpec::default() },
            b: FusionParty { model: &mb, codec: &cb, cond: Condition::Unconditional, guidance: GuidanceSpec::default() },
            sampler: sampler.clone(),
            up: None,
        };
        for seed in 0..5 {
            let fused = coop_latent_sample(&plan, &sched, &mut RngStream::new(seed)).unwrap();
            let solo = sample_loop(
                &ma,
                &[2],
                &Condition::Unconditional,
                &GuidanceSpec::default(),
                &sampler,
                &sched,
                &mut RngStream::new(seed),
            )
            .unwrap();
            assert_eq!(fused.chain_a, solo);
            assert_eq!(fused.x0, ca.decode(&solo.x0).unwrap());
        }
        let c3 = LinearCodec::<f64>::identity(vec![3]).unwrap();
        let bad = FusionPlan { b: FusionParty { codec: &c3, ..plan.b.clone() }, ..plan.clone() };
        assert!(matches!(coop_latent_sample(&bad, &sched, &mut RngStream::new(0)), Err(crate::Error::Config(_))));
        let bad = FusionPlan { mode: FusionMode::Latent { d: 1.5, init: LatentInit::Shared }, ..plan };
        assert!(coop_latent_sample(&bad, &sched, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn full_strength_follows_model_b() {
        let sched = NoiseSchedule::standard();
        let mut rng = RngStream::new(4);
        let gm = GaussianMixture::new(vec![0.5, 0.5], vec![g(&[1.0, 0.0]), g(&[-1.0, 2.0])], vec![0.3, 0.3]).unwrap();
        let ca = LinearCodec::<f64>::random_orthogonal(vec![2], 0.1, &mut rng).unwrap();
        let cb = LinearCodec::<f64>::random_orthogonal(vec![2], 0.0, &mut rng).unwrap();
        let ma = GmDenoiser::new(gm.push_forward(&ca).unwrap(), sched.clone());
        let mb = GmDenoiser::new(gm.push_forward(&cb).unwrap(), sched.clone());
        let sampler = SamplerConfig::evenly_spaced(1000, 20, SamplerMethod::default(), &[]).unwrap();
        let plan = FusionPlan {
            mode: FusionMode::Latent { d: 1.0, init: LatentInit::Shared },
            a: FusionParty { model: &ma, codec: &ca, cond: Condition::Unconditional, guidance: GuidanceSpec::default() },
            b: FusionParty { model: &mb, codec: &cb, cond: Condition::Unconditional, guidance: GuidanceSpec::default() },
            sampler,
            up: None,
        };
        let run = coop_latent_sample(&plan, &sched, &mut RngStream::new(6)).unwrap();
        let via_b = cb.decode(&run.chain_b.x0).unwrap();
        assert!(run.x0.max_abs_diff(&via_b).unwrap() < 1e-8);
    }
}
