//! Training-strategy experiments on a procedural image toy task:
//! monolithic versus time-decoupled generators, structure-data pools and
//! the split-point sweep.

use serde::{Deserialize, Serialize};

use crate::codecs::{downsample, ResolutionOp};
use crate::error::{param_err, Result};
use crate::eval::{fit_gaussian, gaussian_frechet, GaussianSummary};
use crate::models::{
    make_structure_pool, Condition, Dataset, Denoiser, GaussianMixture, InputLayout, MixtureSource, MlpConfig,
    MlpDenoiser, ResolutionPolicy, TrainSpec, train_denoiser,
};
use crate::numerics::{Grid, NoiseSchedule, RngStream, ScheduleKind};
use crate::sampling::{run_chains, time_decoupled_sample, GuidanceSpec, SamplerConfig, SamplerMethod};

/// Two-class procedural images: a signed ramp (vertical for class 0,
/// horizontal for class 1) plus white texture.
///
/// High-res images are `side x side`. Low-res images are
/// `side/factor`-sided, carry the block-averaged class pattern and their own
/// white texture of the same strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyImageTask {
    pub side: usize,
    pub factor: usize,
    pub weights: Vec<f64>,
    pub amplitude: f64,
    pub texture_sd: f64,
}

impl Default for ToyImageTask {
    fn default() -> Self {
        Self { side: 8, factor: 2, weights: vec![0.4, 0.6], amplitude: 0.5, texture_sd: 0.8 }
    }
}

impl ToyImageTask {
    pub fn validate(&self) -> Result<()> {
        if self.factor < 2 || !self.side.is_multiple_of(self.factor) || self.side / self.factor < 2 {
            return Err(param_err!("task side {} must be a multiple of factor {} >= 2", self.side, self.factor));
        }
        if self.weights.len() != 2 {
            return Err(param_err!("toy task has exactly two classes"));
        }
        if !(self.texture_sd > 0.0) || !self.amplitude.is_finite() {
            return Err(param_err!("texture_sd must be positive and amplitude finite"));
        }
        Ok(())
    }

    fn patterns(&self) -> Result<Vec<Grid>> {
        let n = self.side;
        let c = |i: usize| (2 * i + 1) as f64 / n as f64 - 1.0;
        let a = self.amplitude;
        Ok(vec![
            Grid::from_fn2(n, n, |i, _| a * (1.0 + 0.5 * c(i)))?,
            Grid::from_fn2(n, n, |_, j| a * (-1.0 + 0.5 * c(j)))?,
        ])
    }

    pub fn high_mixture(&self) -> Result<GaussianMixture> {
        self.validate()?;
        let v = self.texture_sd * self.texture_sd;
        GaussianMixture::new(self.weights.clone(), self.patterns()?, vec![v, v])
    }

    pub fn low_mixture(&self) -> Result<GaussianMixture> {
        self.validate()?;
        let v = self.texture_sd * self.texture_sd;
        let means = self.patterns()?.iter().map(|m| downsample(m, self.factor)).collect::<Result<_>>()?;
        GaussianMixture::new(self.weights.clone(), means, vec![v, v])
    }

    /// Exact moments of the high-res distribution.
    pub fn ground_truth(&self) -> Result<GaussianSummary> {
        let (m, c) = self.high_mixture()?.moments();
        GaussianSummary::exact(m, c)
    }
}

/// Linear schedule with `T = 1000` and `beta` rising to `0.01`: the final
/// signal fraction stays near `6e-3`, so the large-`t` stage stays within
/// reach of small SGD-trained generators.
pub fn toy_schedule() -> NoiseSchedule {
    NoiseSchedule::build(1000, 1e-4, 0.01, ScheduleKind::Linear).expect("valid constants")
}

/// Where the texture generator's training images come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureData {
    /// The low-res set, sampled at high res afterwards.
    #[default]
    LowRes,
    /// The high-res set.
    HighRes,
}

/// Everything a strategy run needs besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub task: ToyImageTask,
    pub n_high: usize,
    pub n_low: usize,
    /// Hidden width `w` of each decoupled generator; the monolithic model
    /// uses `2w`.
    pub width: usize,
    pub depth: usize,
    pub radius: usize,
    /// Pooled-context size of the monolithic and structure generators.
    pub context: usize,
    /// Pooled-context size of the texture generator; `0` makes it purely
    /// local.
    pub texture_context: usize,
    pub time_embed_dim: usize,
    /// Resolution-embedding size; each generator trains at one resolution
    /// only, so by default none is used.
    pub res_embed_dim: usize,
    pub skip: bool,
    /// Optimizer steps of the monolithic model; a decoupled pair splits
    /// them evenly.
    pub total_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub t_struct: usize,
    pub texture_data: TextureData,
    pub sampler: SamplerMethod,
    pub sample_steps: usize,
    pub eval_samples: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            task: ToyImageTask::default(),
            n_high: 24,
            n_low: 2000,
            width: 16,
            depth: 2,
            radius: 1,
            context: 2,
            texture_context: 2,
            time_embed_dim: 8,
            res_embed_dim: 0,
            skip: true,
            total_steps: 2000,
            batch_size: 8,
            learning_rate: 0.05,
            t_struct: 500,
            texture_data: TextureData::LowRes,
            sampler: SamplerMethod::Ancestral,
            sample_steps: 50,
            eval_samples: 1000,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self, schedule_steps: usize) -> Result<()> {
        self.task.validate()?;
        if self.n_high == 0 || self.n_low == 0 {
            return Err(param_err!("n_high and n_low must be positive"));
        }
        if self.width == 0 || self.depth == 0 {
            return Err(param_err!("width and depth must be positive"));
        }
        if self.total_steps < 2 || self.batch_size == 0 {
            return Err(param_err!("total_steps must be >= 2 and batch_size positive"));
        }
        if self.t_struct == 0 || self.t_struct >= schedule_steps {
            return Err(param_err!("t_struct must lie in (0, {schedule_steps}), got {}", self.t_struct));
        }
        let d = self.task.side * self.task.side;
        if self.eval_samples <= d {
            return Err(param_err!("eval_samples must exceed the image dimension {d}"));
        }
        if self.sample_steps == 0 || self.sample_steps > schedule_steps {
            return Err(param_err!("sample_steps must lie in [1, {schedule_steps}]"));
        }
        Ok(())
    }

    pub fn mlp_config(&self, width: usize, context: usize, schedule_steps: usize) -> MlpConfig {
        MlpConfig {
            layout: InputLayout::Patch { radius: self.radius, context },
            hidden: vec![width; self.depth],
            time_embed_dim: self.time_embed_dim,
            labels: Default::default(),
            resolutions: vec![self.task.side / self.task.factor, self.task.side],
            res_embed_dim: self.res_embed_dim,
            skip: self.skip,
            schedule_steps,
        }
    }
}

/// The training sets of one seed.
pub struct ToyData {
    pub high: Dataset,
    pub low: Dataset,
    pub pool: Dataset,
}

impl ToyData {
    pub fn draw(cfg: &StrategyConfig, rng: &mut RngStream) -> Result<Self> {
        let hi = MixtureSource { mixture: cfg.task.high_mixture()?, labelled: false };
        let lo = MixtureSource { mixture: cfg.task.low_mixture()?, labelled: false };
        let high = Dataset::sample_from(&hi, cfg.n_high, rng);
        let low = Dataset::sample_from(&lo, cfg.n_low, rng);
        let pool = make_structure_pool(&high, &low, &ResolutionOp::up(cfg.task.factor)?)?;
        Ok(Self { high, low, pool })
    }
}

/// Which data and width a generator is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Monolithic,
    Structure { pooled: bool },
    Texture,
}

/// A trained generator with its cost.
pub struct Trained {
    pub model: MlpDenoiser,
    pub steps: usize,
}

impl Trained {
    pub fn params(&self) -> usize {
        self.model.num_params()
    }

    pub fn param_steps(&self) -> u64 {
        (self.params() * self.steps) as u64
    }
}

/// Trains one generator; `stream` separates the initialization and data
/// order of different roles under one seed.
pub fn train_role(
    cfg: &StrategyConfig,
    data: &ToyData,
    role: Role,
    t_struct: usize,
    schedule: &NoiseSchedule,
    seed: u64,
    stream: u64,
) -> Result<Trained> {
    let big_t = schedule.steps();
    let half = cfg.total_steps / 2;
    let (width, context, steps, t_range, set) = match role {
        Role::Monolithic => (2 * cfg.width, cfg.context, cfg.total_steps, (1, big_t), &data.high),
        Role::Structure { pooled } => {
            let set = if pooled { &data.pool } else { &data.high };
            (cfg.width, cfg.context, half, (t_struct + 1, big_t), set)
        }
        Role::Texture => {
            let set = match cfg.texture_data {
                TextureData::LowRes => &data.low,
                TextureData::HighRes => &data.high,
            };
            (cfg.width, cfg.texture_context, half, (1, t_struct), set)
        }
    };
    let mut rng = RngStream::new(seed).split(stream);
    let model = MlpDenoiser::new(cfg.mlp_config(width, context, big_t), &mut rng)?;
    let spec = TrainSpec {
        t_range,
        resolution_policy: ResolutionPolicy::Native,
        steps,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        seed,
        cond_dropout: 0.0,
    };
    let (model, _) = train_denoiser(model, set, &spec, schedule, &mut rng)?;
    Ok(Trained { model, steps })
}

/// Fréchet distance of generated high-res samples to the exact task
/// distribution. Passing one model twice samples with it alone.
pub fn evaluate(
    cfg: &StrategyConfig,
    structure: &dyn Denoiser<f64>,
    texture: &dyn Denoiser<f64>,
    t_struct: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    let sampler = SamplerConfig::evenly_spaced(schedule.steps(), cfg.sample_steps, cfg.sampler, &[t_struct])?
        .with_record(false);
    let shape = [cfg.task.side, cfg.task.side];
    let g = GuidanceSpec::default();
    let rng = RngStream::new(seed).split(0xE7A1);
    let samples: Vec<Grid> = run_chains(cfg.eval_samples, &rng, |r| {
        Ok(time_decoupled_sample(&structure, &texture, t_struct, &shape, &Condition::Unconditional, &g, &sampler, schedule, r)?.x0)
    })?;
    gaussian_frechet(&fit_gaussian(&samples)?, &cfg.task.ground_truth()?)
}

/// One arm of the strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmResult {
    pub arm: String,
    pub params: usize,
    pub steps: usize,
    pub param_steps: u64,
    pub frechet: f64,
}

/// Monolithic `2w` model, decoupled pair with a pooled structure
/// generator, and the same pair with a high-res-only structure generator.
pub fn compare_strategies(cfg: &StrategyConfig, schedule: &NoiseSchedule, seed: u64) -> Result<Vec<ArmResult>> {
    cfg.validate(schedule.steps())?;
    let data = ToyData::draw(cfg, &mut RngStream::new(seed).split(0xDA7A))?;
    let ts = cfg.t_struct;
    let mono = train_role(cfg, &data, Role::Monolithic, ts, schedule, seed, 1)?;
    let pooled = train_role(cfg, &data, Role::Structure { pooled: true }, ts, schedule, seed, 2)?;
    let high_only = train_role(cfg, &data, Role::Structure { pooled: false }, ts, schedule, seed, 3)?;
    let texture = train_role(cfg, &data, Role::Texture, ts, schedule, seed, 4)?;
    let mut rows = Vec::new();
    let f = evaluate(cfg, &mono.model, &mono.model, ts, schedule, seed)?;
    rows.push(ArmResult {
        arm: "monolithic".into(),
        params: mono.params(),
        steps: mono.steps,
        param_steps: mono.param_steps(),
        frechet: f,
    });
    for (name, s) in [("decoupled", &pooled), ("decoupled_high_res_structure", &high_only)] {
        let f = evaluate(cfg, &s.model, &texture.model, ts, schedule, seed)?;
        rows.push(ArmResult {
            arm: name.into(),
            params: s.params() + texture.params(),
            steps: s.steps + texture.steps,
            param_steps: s.param_steps() + texture.param_steps(),
            frechet: f,
        });
    }
    Ok(rows)
}

/// Fréchet distance of a freshly trained pair per split point.
pub fn ablate_tstruct(
    cfg: &StrategyConfig,
    values: &[usize],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    cfg.validate(schedule.steps())?;
    if values.is_empty() {
        return Err(param_err!("no T_struct values given"));
    }
    for &v in values {
        if v == 0 || v >= schedule.steps() {
            return Err(param_err!("T_struct value {v} outside (0, {})", schedule.steps()));
        }
    }
    let data = ToyData::draw(cfg, &mut RngStream::new(seed).split(0xDA7A))?;
    values
        .iter()
        .map(|&ts| {
            let s = train_role(cfg, &data, Role::Structure { pooled: true }, ts, schedule, seed, 2)?;
            let x = train_role(cfg, &data, Role::Texture, ts, schedule, seed, 4)?;
            Ok((ts, evaluate(cfg, &s.model, &x.model, ts, schedule, seed)?))
        })
        .collect()
}
