//! The JSON experiment document and its validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cli::strategies::StrategyConfig;
use crate::codecs::{CodecRecord, LinearCodec, ResolutionOp};
use crate::coop::{FusionMode, FusionParty, FusionPlan};
use crate::error::{Error, Result};
use crate::eval::GaussianSummary;
use crate::models::io::{load_mixture, load_mlp};
use crate::models::{
    Condition, CovGmDenoiser, CovMixture, Denoiser, GaussianMixture, GmDenoiser, MixtureRecord, MlpConfig,
    MlpDenoiser,
};
use crate::numerics::{NoiseSchedule, RngStream, ScheduleKind};
use crate::sampling::{GuidanceSpec, SamplerConfig, SamplerMethod};

fn config_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

/// Re-labels any error raised while checking `field` as a config error.
fn at<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(m),
        other => config_err(field, other),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(default)]
    pub kind: ScheduleKind,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { steps: 1000, beta_min: 1e-4, beta_max: 0.02, kind: ScheduleKind::Linear }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default)]
    pub method: SamplerMethod,
    pub steps: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self { method: SamplerMethod::default(), steps: 50 }
    }
}

/// Where a denoiser comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Analytic oracle of an inline mixture.
    Mixture {
        mixture: MixtureRecord,
        /// Component `k` answers `Class(k)` queries.
        #[serde(default)]
        class_conditional: bool,
    },
    MixtureFile {
        path: PathBuf,
        #[serde(default)]
        class_conditional: bool,
    },
    MlpFile { path: PathBuf },
    /// Exact oracle of a named mixture pushed through pixel upsampling.
    UpsampledMixture { of: String, factor: usize },
    /// Exact oracle of a named pixel-space mixture seen through a codec's
    /// encoder.
    EncodedMixture { of: String, codec: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CodecSpec {
    Identity { shape: Vec<usize> },
    Scaled { shape: Vec<usize>, scale: f64 },
    RandomOrthogonal { shape: Vec<usize>, #[serde(default)] bias_scale: f64, seed: u64 },
    Inline { record: CodecRecord },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub model: String,
    /// Second-stage model for time-decoupled sampling.
    #[serde(default)]
    pub texture_model: Option<String>,
    #[serde(default)]
    pub t_struct: usize,
    /// Needed when no sampled model has a fixed shape.
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
    /// Decode final samples with this codec.
    #[serde(default)]
    pub codec: Option<String>,
    pub chains: usize,
    #[serde(default)]
    pub trajectory: bool,
    /// Oracle model whose exact distribution the samples are scored
    /// against; defaults to the sampled model when it is an oracle.
    #[serde(default)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartySpec {
    pub model: String,
    pub codec: String,
    #[serde(default)]
    pub cond: Option<Condition>,
    #[serde(default)]
    pub guidance: Option<GuidanceSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseSection {
    pub mode: FusionMode,
    /// Latent mode: the two fused parties. Resolution mode: `a` is the
    /// high-res pair, `b` the low-res pair.
    pub a: PartySpec,
    pub b: PartySpec,
    pub chains: usize,
    #[serde(default = "two")]
    pub up_factor: usize,
    #[serde(default)]
    pub trajectory: bool,
    #[serde(default)]
    pub reference: Option<String>,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainRole {
    Monolithic,
    Structure,
    Texture,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Name of the high-res mixture model.
    pub high: String,
    /// Finite training set size; fresh draws every step when absent.
    #[serde(default)]
    pub n_high: Option<usize>,
    /// Name of the low-res mixture model.
    #[serde(default)]
    pub low: Option<String>,
    #[serde(default)]
    pub n_low: Option<usize>,
    #[serde(default = "two")]
    pub factor: usize,
    #[serde(default)]
    pub labelled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub role: TrainRole,
    pub mlp: MlpConfig,
    pub data: DataSpec,
    #[serde(default = "default_t_struct")]
    pub t_struct: usize,
    /// Overrides the role's default range.
    #[serde(default)]
    pub t_range: Option<(usize, usize)>,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub cond_dropout: f64,
}

fn default_t_struct() -> usize {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    #[serde(default)]
    pub strategy: StrategyConfig,
    pub values: Vec<usize>,
    /// Averaged over; defaults to the run seed alone.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// A `samples.csv` as written by `sample` or `fuse`.
    pub samples: PathBuf,
    /// Oracle model to score against.
    #[serde(default)]
    pub reference: Option<String>,
    /// Or a second samples file.
    #[serde(default)]
    pub reference_samples: Option<PathBuf>,
}

/// One JSON document describing a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub seed: u64,
    /// Used when `--out` is not given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub models: BTreeMap<String, ModelSpec>,
    #[serde(default)]
    pub codecs: BTreeMap<String, CodecSpec>,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub guidance: GuidanceSpec,
    #[serde(default)]
    pub cond: Condition,
    #[serde(default)]
    pub sample: Option<SampleSection>,
    #[serde(default)]
    pub fuse: Option<FuseSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub ablate: Option<AblateSection>,
    #[serde(default)]
    pub compare: Option<CompareSection>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
}

/// A loaded denoiser.
pub enum Model {
    Mixture(GmDenoiser<f64>),
    Cov(CovGmDenoiser<f64>),
    Mlp(MlpDenoiser<f64>),
}

impl Model {
    pub fn denoiser(&self) -> &dyn Denoiser<f64> {
        match self {
            Model::Mixture(m) => m,
            Model::Cov(m) => m,
            Model::Mlp(m) => m,
        }
    }

    /// Fixed sample shape, if the model has one.
    pub fn shape(&self) -> Option<Vec<usize>> {
        match self {
            Model::Mixture(m) => Some(m.mixture().shape().to_vec()),
            Model::Cov(m) => Some(m.mixture.shape().to_vec()),
            Model::Mlp(m) => match &m.config().layout {
                crate::models::InputLayout::Dense { shape } => Some(shape.clone()),
                crate::models::InputLayout::Patch { .. } => None,
            },
        }
    }

    /// Exact moments for oracles.
    pub fn exact_summary(&self) -> Option<Result<GaussianSummary>> {
        let (m, c) = match self {
            Model::Mixture(m) => m.mixture().moments(),
            Model::Cov(m) => m.mixture.moments(),
            Model::Mlp(_) => return None,
        };
        Some(GaussianSummary::exact(m, c))
    }

    pub fn mixture(&self) -> Option<&GaussianMixture<f64>> {
        match self {
            Model::Mixture(m) => Some(m.mixture()),
            _ => None,
        }
    }
}

/// Validated config with every referenced model and codec loaded.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub models: BTreeMap<String, Model>,
    pub codecs: BTreeMap<String, LinearCodec<f64>>,
    pub seed: u64,
    /// Directory relative paths in the config resolve against.
    pub base: PathBuf,
}

fn mixture_denoiser(gm: GaussianMixture, conditional: bool, schedule: &NoiseSchedule) -> Result<GmDenoiser> {
    if conditional {
        GmDenoiser::class_conditional(gm, schedule.clone())
    } else {
        Ok(GmDenoiser::new(gm, schedule.clone()))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    fn schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        at("schedule", NoiseSchedule::build(s.steps, s.beta_min, s.beta_max, s.kind))
    }

    /// Loads everything the command needs and checks cross-field
    /// consistency; nothing is sampled or trained here.
    pub fn prepare(self, command: &str, base: &Path, seed_override: Option<u64>) -> Result<Prepared> {
        let schedule = self.schedule()?;
        at("guidance", self.guidance.validate())?;
        let boundaries: Vec<usize> = match command {
            "sample" => self.sample.as_ref().map(|s| s.t_struct).into_iter().collect(),
            "fuse" => match self.fuse.as_ref().map(|f| f.mode) {
                Some(FusionMode::Resolution { t_low, .. }) => vec![t_low],
                _ => vec![],
            },
            _ => vec![],
        };
        let sampler = at(
            "sampler",
            SamplerConfig::evenly_spaced(schedule.steps(), self.sampler.steps, self.sampler.method, &boundaries),
        )?;
        let mut codecs = BTreeMap::new();
        for (name, spec) in &self.codecs {
            let field = format!("codecs.{name}");
            let c = match spec {
                CodecSpec::Identity { shape } => LinearCodec::identity(shape.clone()),
                CodecSpec::Scaled { shape, scale } => LinearCodec::scaled(shape.clone(), *scale),
                CodecSpec::RandomOrthogonal { shape, bias_scale, seed } => {
                    LinearCodec::random_orthogonal(shape.clone(), *bias_scale, &mut RngStream::new(*seed))
                }
                CodecSpec::Inline { record } => LinearCodec::from_record(record),
                CodecSpec::File { path } => std::fs::read(base.join(path))
                    .map_err(Error::from)
                    .and_then(|b| Ok(serde_json::from_slice::<CodecRecord>(&b)?))
                    .and_then(|r| LinearCodec::from_record(&r)),
            };
            codecs.insert(name.clone(), at(&field, c)?);
        }
        let mut models = BTreeMap::new();
        // plain mixtures first so derived oracles can refer to them
        let mut order: Vec<(&String, &ModelSpec)> = self.models.iter().collect();
        order.sort_by_key(|(_, s)| matches!(s, ModelSpec::UpsampledMixture { .. } | ModelSpec::EncodedMixture { .. }));
        for (name, spec) in order {
            let field = format!("models.{name}");
            let m = match spec {
                ModelSpec::Mixture { mixture, class_conditional } => {
                    let gm = at(&field, GaussianMixture::from_record(mixture))?;
                    Model::Mixture(at(&field, mixture_denoiser(gm, *class_conditional, &schedule))?)
                }
                ModelSpec::MixtureFile { path, class_conditional } => {
                    let gm = at(&field, load_mixture(&base.join(path)))?;
                    Model::Mixture(at(&field, mixture_denoiser(gm, *class_conditional, &schedule))?)
                }
                ModelSpec::MlpFile { path } => {
                    let m: MlpDenoiser<f64> = at(&field, load_mlp(&base.join(path)))?;
                    if m.config().schedule_steps != schedule.steps() {
                        return Err(config_err(&field, "model was trained for a different number of steps"));
                    }
                    Model::Mlp(m)
                }
                ModelSpec::UpsampledMixture { of, factor } => {
                    let src = models
                        .get(of)
                        .and_then(Model::mixture)
                        .ok_or_else(|| config_err(&field, format!("`{of}` is not a mixture model")))?;
                    let cov = at(&field, CovMixture::from_isotropic(src).and_then(|c| c.upsampled(*factor)))?;
                    Model::Cov(CovGmDenoiser { mixture: cov, schedule: schedule.clone() })
                }
                ModelSpec::EncodedMixture { of, codec } => {
                    let src = models
                        .get(of)
                        .and_then(Model::mixture)
                        .ok_or_else(|| config_err(&field, format!("`{of}` is not a mixture model")))?;
                    let codec = codecs
                        .get(codec)
                        .ok_or_else(|| config_err(&field, format!("unknown codec `{codec}`")))?;
                    Model::Mixture(GmDenoiser::new(at(&field, src.push_forward(codec))?, schedule.clone()))
                }
            };
            models.insert(name.clone(), m);
        }
        let seed = seed_override.unwrap_or(self.seed);
        let p = Prepared { schedule, sampler, models, codecs, seed, base: base.to_path_buf(), config: self };
        p.check(command)?;
        Ok(p)
    }
}

impl Prepared {
    pub fn model(&self, field: &str, name: &str) -> Result<&Model> {
        self.models.get(name).ok_or_else(|| config_err(field, format!("unknown model `{name}`")))
    }

    pub fn codec(&self, field: &str, name: &str) -> Result<&LinearCodec<f64>> {
        self.codecs.get(name).ok_or_else(|| config_err(field, format!("unknown codec `{name}`")))
    }

    fn section<'a, S>(s: &'a Option<S>, name: &str) -> Result<&'a S> {
        s.as_ref().ok_or_else(|| config_err(name, "section missing for this command"))
    }

    /// Shape of the sampled latent in `sample`.
    pub fn sample_shape(&self) -> Result<Vec<usize>> {
        let s = Self::section(&self.config.sample, "sample")?;
        let mut shape = s.shape.clone();
        for name in std::iter::once(&s.model).chain(&s.texture_model) {
            if let Some(fixed) = self.model("sample.model", name)?.shape() {
                match &shape {
                    Some(sh) if sh != &fixed => {
                        return Err(config_err("sample.shape", format!("{sh:?} does not match model `{name}` shape {fixed:?}")))
                    }
                    _ => shape = Some(fixed),
                }
            }
        }
        shape.ok_or_else(|| config_err("sample.shape", "required when no model fixes the shape"))
    }

    /// The fusion plan of `fuse`.
    pub fn fusion_plan(&self) -> Result<FusionPlan<'_, f64>> {
        let f = Self::section(&self.config.fuse, "fuse")?;
        let party = |field: &str, p: &PartySpec| -> Result<FusionParty<'_, f64>> {
            Ok(FusionParty {
                model: self.model(&format!("{field}.model"), &p.model)?.denoiser(),
                codec: self.codec(&format!("{field}.codec"), &p.codec)?,
                cond: p.cond.unwrap_or(self.config.cond),
                guidance: p.guidance.unwrap_or(self.config.guidance),
            })
        };
        let up = match f.mode {
            FusionMode::Resolution { .. } => Some(at("fuse.up_factor", ResolutionOp::up(f.up_factor))?),
            FusionMode::Latent { .. } => None,
        };
        let plan = FusionPlan {
            mode: f.mode,
            a: party("fuse.a", &f.a)?,
            b: party("fuse.b", &f.b)?,
            sampler: self.sampler.clone(),
            up,
        };
        if let FusionMode::Latent { d, .. } = f.mode {
            if !(0.0..=1.0).contains(&d) {
                return Err(config_err("fuse.mode.d", format!("must lie in [0, 1], got {d}")));
            }
        }
        at("fuse.mode", plan.validate(self.schedule.steps()))?;
        Ok(plan)
    }

    /// Range checks on every section present, whichever command runs.
    fn check_fields(&self) -> Result<()> {
        let big_t = self.schedule.steps();
        if let Some(f) = &self.config.fuse {
            match f.mode {
                FusionMode::Latent { d, .. } if !(0.0..=1.0).contains(&d) => {
                    return Err(config_err("fuse.mode.d", format!("must lie in [0, 1], got {d}")));
                }
                FusionMode::Resolution { t_low, .. } if t_low == 0 || t_low > big_t => {
                    return Err(config_err("fuse.mode.t_low", format!("must lie in [1, {big_t}], got {t_low}")));
                }
                _ => {}
            }
        }
        if let Some(s) = &self.config.sample {
            if s.t_struct >= big_t {
                return Err(config_err("sample.t_struct", format!("must be below T = {big_t}")));
            }
        }
        if let Some(t) = &self.config.train {
            if t.t_struct == 0 || t.t_struct >= big_t {
                return Err(config_err("train.t_struct", format!("must lie in (0, {big_t})")));
            }
        }
        if let Some(a) = &self.config.ablate {
            if let Some(v) = a.values.iter().find(|&&v| v == 0 || v >= big_t) {
                return Err(config_err("ablate.values", format!("{v} outside (0, {big_t})")));
            }
        }
        Ok(())
    }

    fn check(&self, command: &str) -> Result<()> {
        self.check_fields()?;
        let big_t = self.schedule.steps();
        match command {
            "sample" => {
                let s = Self::section(&self.config.sample, "sample")?;
                if s.chains == 0 {
                    return Err(config_err("sample.chains", "must be positive"));
                }
                self.model("sample.model", &s.model)?;
                if let Some(x) = &s.texture_model {
                    self.model("sample.texture_model", x)?;
                    if s.t_struct >= big_t {
                        return Err(config_err("sample.t_struct", format!("must be below T = {big_t}")));
                    }
                } else if s.t_struct != 0 {
                    return Err(config_err("sample.t_struct", "set without a texture_model"));
                }
                let shape = self.sample_shape()?;
                if let Some(c) = &s.codec {
                    let codec = self.codec("sample.codec", c)?;
                    if codec.latent_shape() != shape.as_slice() {
                        return Err(config_err("sample.codec", "latent shape does not match the sampled shape"));
                    }
                }
                if let Some(r) = &s.reference {
                    if self.model("sample.reference", r)?.exact_summary().is_none() {
                        return Err(config_err("sample.reference", format!("`{r}` is not an oracle")));
                    }
                }
            }
            "fuse" => {
                let f = Self::section(&self.config.fuse, "fuse")?;
                if f.chains == 0 {
                    return Err(config_err("fuse.chains", "must be positive"));
                }
                self.fusion_plan()?;
                if let Some(r) = &f.reference {
                    if self.model("fuse.reference", r)?.exact_summary().is_none() {
                        return Err(config_err("fuse.reference", format!("`{r}` is not an oracle")));
                    }
                }
            }
            "train" => {
                let t = Self::section(&self.config.train, "train")?;
                if t.mlp.schedule_steps != big_t {
                    return Err(config_err("train.mlp.schedule_steps", format!("must equal T = {big_t}")));
                }
                if t.t_struct == 0 || t.t_struct >= big_t {
                    return Err(config_err("train.t_struct", format!("must lie in (0, {big_t})")));
                }
                let d = &t.data;
                if self.model("train.data.high", &d.high)?.mixture().is_none() {
                    return Err(config_err("train.data.high", "must name a mixture model"));
                }
                if let Some(lo) = &d.low {
                    if self.model("train.data.low", lo)?.mixture().is_none() {
                        return Err(config_err("train.data.low", "must name a mixture model"));
                    }
                }
                if t.role == TrainRole::Structure && (d.n_high.is_none() || d.low.is_none() || d.n_low.is_none()) {
                    return Err(config_err("train.data", "structure role needs n_high, low and n_low"));
                }
                at("train.mlp", MlpDenoiser::<f64>::zeros(t.mlp.clone()))?;
                at("train", self.train_spec()?.validate(big_t))?;
            }
            "ablate-tstruct" => {
                let a = Self::section(&self.config.ablate, "ablate")?;
                at("ablate.strategy", a.strategy.validate(big_t))?;
                if a.values.is_empty() {
                    return Err(config_err("ablate.values", "no T_struct values given"));
                }
                if let Some(v) = a.values.iter().find(|&&v| v == 0 || v >= big_t) {
                    return Err(config_err("ablate.values", format!("{v} outside (0, {big_t})")));
                }
                if a.seeds.as_ref().is_some_and(Vec::is_empty) {
                    return Err(config_err("ablate.seeds", "empty seed list"));
                }
            }
            "compare-strategies" => {
                let c = Self::section(&self.config.compare, "compare")?;
                at("compare.strategy", c.strategy.validate(big_t))?;
                if c.seeds.as_ref().is_some_and(Vec::is_empty) {
                    return Err(config_err("compare.seeds", "empty seed list"));
                }
            }
            "eval" => {
                let e = Self::section(&self.config.eval, "eval")?;
                for (field, path) in
                    std::iter::once(("eval.samples", &e.samples)).chain(e.reference_samples.iter().map(|p| ("eval.reference_samples", p)))
                {
                    if !self.base.join(path).is_file() {
                        return Err(config_err(field, format!("{} does not exist", path.display())));
                    }
                }
                match (&e.reference, &e.reference_samples) {
                    (Some(r), None) => {
                        if self.model("eval.reference", r)?.exact_summary().is_none() {
                            return Err(config_err("eval.reference", format!("`{r}` is not an oracle")));
                        }
                    }
                    (None, Some(_)) => {}
                    _ => return Err(config_err("eval", "give exactly one of reference, reference_samples")),
                }
            }
            other => return Err(Error::Config(format!("unknown command `{other}`"))),
        }
        Ok(())
    }

    /// Training settings of `train` with the role's default range applied.
    pub fn train_spec(&self) -> Result<crate::models::TrainSpec> {
        let t = Self::section(&self.config.train, "train")?;
        let big_t = self.schedule.steps();
        let t_range = t.t_range.unwrap_or(match t.role {
            TrainRole::Monolithic => (1, big_t),
            TrainRole::Structure => (t.t_struct + 1, big_t),
            TrainRole::Texture => (1, t.t_struct),
        });
        let resolution_policy = match (t.role, &t.data.low) {
            (TrainRole::Structure, _) => crate::models::ResolutionPolicy::UpscaleLowResIntoPool,
            (TrainRole::Texture, None) => crate::models::ResolutionPolicy::TrainAtLowRes { factor: t.data.factor },
            _ => crate::models::ResolutionPolicy::Native,
        };
        Ok(crate::models::TrainSpec {
            t_range,
            resolution_policy,
            steps: t.steps,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            seed: self.seed,
            cond_dropout: t.cond_dropout,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prepare(json: &str, command: &str) -> Result<Prepared> {
        ExperimentConfig::from_json(json)?.prepare(command, Path::new("."), None)
    }

    fn config_message(r: Result<Prepared>) -> String {
        match r {
            Err(Error::Config(m)) => m,
            Err(e) => panic!("expected a config error, got {e}"),
            Ok(_) => panic!("expected a config error"),
        }
    }

    const DATA: &str = r#""models": {
        "hi": {"kind": "mixture", "mixture": {"shape": [4, 4], "weights": [1.0], "means": [[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0]], "variances": [1.0]}},
        "lo": {"kind": "mixture", "mixture": {"shape": [2, 2], "weights": [1.0], "means": [[0,0,0,0]], "variances": [1.0]}}}"#;

    fn train_json(role: &str, extra: &str) -> String {
        format!(
            r#"{{{DATA}, "train": {{"role": "{role}", "mlp": {{"layout": {{"kind": "patch", "radius": 1, "context": 2}}, "hidden": [8], "time_embed_dim": 4, "schedule_steps": 1000}},
                "data": {{"high": "hi", "n_high": 4, "low": "lo", "n_low": 8}}, "steps": 10, "learning_rate": 0.01, "batch_size": 2{extra}}}}}"#
        )
    }

    #[test]
    fn role_sets_the_default_timestep_range() {
        let range = |role: &str, extra: &str| prepare(&train_json(role, extra), "train").unwrap().train_spec().unwrap().t_range;
        assert_eq!(range("monolithic", ""), (1, 1000));
        assert_eq!(range("structure", ""), (501, 1000));
        assert_eq!(range("texture", ""), (1, 500));
        assert_eq!(range("structure", r#", "t_struct": 300"#), (301, 1000));
        assert_eq!(range("texture", r#", "t_range": [5, 50]"#), (5, 50));
    }

    #[test]
    fn structure_role_needs_low_res_data() {
        let json = train_json("structure", "").replace(r#", "low": "lo", "n_low": 8"#, "");
        let m = config_message(prepare(&json, "train"));
        assert!(m.starts_with("train.data"), "{m}");
    }

    #[test]
    fn field_errors_name_the_field() {
        let fuse = |d: &str| {
            format!(
                r#"{{"models": {{"m": {{"kind": "mixture", "mixture": {{"shape": [2], "weights": [1.0], "means": [[0.0, 0.0]], "variances": [1.0]}}}}}},
                    "codecs": {{"c": {{"kind": "identity", "shape": [2]}}}},
                    "fuse": {{"mode": {{"kind": "latent", "d": {d}}}, "a": {{"model": "m", "codec": "c"}}, "b": {{"model": "m", "codec": "c"}}, "chains": 4}}}}"#
            )
        };
        prepare(&fuse("0.5"), "fuse").unwrap();
        assert!(config_message(prepare(&fuse("1.5"), "fuse")).starts_with("fuse.mode.d"));
        let missing = fuse("0.5").replace(r#""b": {"model": "m""#, r#""b": {"model": "nope""#);
        assert!(config_message(prepare(&missing, "fuse")).contains("nope"));
        let ablate = r#"{"ablate": {"values": [200, 1000]}}"#;
        assert!(config_message(prepare(ablate, "ablate-tstruct")).starts_with("ablate.values"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"sede": 1}"#), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"sampler": {"stepz": 1}}"#), Err(Error::Config(_))));
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!((c.sampler.steps, c.schedule.steps), (50, 1000));
    }
}
