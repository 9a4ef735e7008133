//! Subcommand drivers. Each one reads a config, writes its artifacts into
//! the output directory and finishes with `manifest.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cli::config::{ExperimentConfig, Model, Prepared, TrainRole};
use crate::cli::strategies::{ablate_tstruct, compare_strategies};
use crate::cli::write_atomic;
use crate::codecs::{naive_upsample_latent, ResolutionOp};
use crate::coop::{coop_latent_sample, coop_resolution_sample, FusionMode, UpsampleMode};
use crate::error::{Error, Result};
use crate::eval::{
    fit_gaussian_rows, gaussian_frechet, lag1_autocorr, metrics_csv, mixture_occupancy, GaussianSummary, MetricRow,
};
use crate::models::io::save_mlp;
use crate::models::{make_structure_pool, DataSource, Dataset, MixtureSource, MlpDenoiser, train_denoiser};
use crate::numerics::{Grid, RngStream};
use crate::sampling::{
    guided_prediction, invert_to_eps, predict_x0, run_chains, sample_loop, time_decoupled_sample, Trajectory,
};

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Draw samples from one model, or from a structure/texture pair.
    Sample(RunArgs),
    /// Cooperative sampling with two models (latent or resolution mode).
    Fuse(RunArgs),
    /// Train a patch or dense MLP denoiser.
    Train(RunArgs),
    /// Sweep the structure/texture split point on the toy image task.
    AblateTstruct(RunArgs),
    /// Monolithic against decoupled generators on the toy image task.
    CompareStrategies(RunArgs),
    /// Score a samples file against an oracle or another samples file.
    Eval(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sample(_) => "sample",
            Command::Fuse(_) => "fuse",
            Command::Train(_) => "train",
            Command::AblateTstruct(_) => "ablate-tstruct",
            Command::CompareStrategies(_) => "compare-strategies",
            Command::Eval(_) => "eval",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Sample(a)
            | Command::Fuse(a)
            | Command::Train(a)
            | Command::AblateTstruct(a)
            | Command::CompareStrategies(a)
            | Command::Eval(a) => a,
        }
    }
}

/// Process exit status for an error: 2 for bad input, 3 for failures while
/// running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
}

struct Output {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Output {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }
}

/// Runs one subcommand end to end.
pub fn run(command: &Command) -> Result<Manifest> {
    let args = command.args();
    let text = std::fs::read(&args.config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", args.config.display())))?;
    let hash = Sha256::digest(&text).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });
    let text = std::str::from_utf8(&text).map_err(|_| Error::Config("config is not UTF-8".into()))?;
    let config = ExperimentConfig::from_json(text)?;
    let base = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let dir = match (&args.out, &config.output_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => return Err(Error::Config("output_dir: give --out or set output_dir".into())),
    };
    let p = config.prepare(command.name(), &base, args.seed)?;
    std::fs::create_dir_all(&dir)?;
    let mut out = Output { dir, artifacts: Vec::new() };
    match command {
        Command::Sample(_) => sample(&p, &mut out)?,
        Command::Fuse(_) => fuse(&p, &mut out)?,
        Command::Train(_) => train(&p, &mut out)?,
        Command::AblateTstruct(_) => ablate(&p, &mut out)?,
        Command::CompareStrategies(_) => compare(&p, &mut out)?,
        Command::Eval(_) => eval(&p, &mut out)?,
    }
    let manifest =
        Manifest { command: command.name().into(), config_sha256: hash, seed: p.seed, artifacts: out.artifacts.clone() };
    write_atomic(&out.dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn samples_csv(samples: &[Vec<f64>]) -> Vec<u8> {
    let d = samples.first().map_or(0, Vec::len);
    let mut s = String::from("chain");
    for j in 0..d {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for (i, row) in samples.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s.into_bytes()
}

fn read_samples_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| Error::Format(format!("{}: bad value `{v}`: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format(format!("{}: no samples", path.display())));
    }
    Ok(rows)
}

/// Recorded states of each chain, then its final state at `t_end`.
fn trajectory_csv(trajs: &[&Trajectory], t_end: usize) -> Vec<u8> {
    let d = trajs.first().map_or(0, |t| t.x0.len());
    let mut s = String::from("chain,t");
    for j in 0..d {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for (i, tr) in trajs.iter().enumerate() {
        for (t, z) in tr.states.iter().map(|(t, z)| (*t, z)).chain(std::iter::once((t_end, &tr.x0))) {
            let _ = write!(s, "{i},{t}");
            for v in z.data() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s.into_bytes()
}

/// 64x64 binary greymap of 2-D samples, first coordinate to the right,
/// second up.
pub fn histogram_pgm(samples: &[Vec<f64>]) -> Vec<u8> {
    const N: usize = 64;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for s in samples {
        for k in 0..2 {
            lo[k] = lo[k].min(s[k]);
            hi[k] = hi[k].max(s[k]);
        }
    }
    let mut counts = vec![0u32; N * N];
    for s in samples {
        let bin = |k: usize| {
            let span = (hi[k] - lo[k]).max(1e-12);
            (((s[k] - lo[k]) / span * N as f64) as usize).min(N - 1)
        };
        counts[(N - 1 - bin(1)) * N + bin(0)] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let mut bytes = format!("P5\n{N} {N}\n255\n").into_bytes();
    bytes.extend(counts.iter().map(|&c| (c as u64 * 255 / max as u64) as u8));
    bytes
}

/// Fréchet distance and, for isotropic mixtures, component occupancy.
fn score(run_id: &str, samples: &[Vec<f64>], reference: &Model, seed: u64, rows: &mut Vec<MetricRow>) -> Result<()> {
    let n = samples.len();
    let exact = reference.exact_summary().expect("reference is an oracle")?;
    let fit = fit_gaussian_rows(samples)?;
    rows.push(MetricRow::new(run_id, "frechet", gaussian_frechet(&fit, &exact)?, n, seed));
    if let Some(gm) = reference.mixture() {
        let grids = samples.iter().map(|s| Grid::new(gm.shape().to_vec(), s.clone())).collect::<Result<Vec<_>>>()?;
        for (k, occ) in mixture_occupancy(&grids, gm)?.into_iter().enumerate() {
            rows.push(MetricRow::new(run_id, &format!("occupancy_{k}"), occ, n, seed));
            rows.push(MetricRow::new(run_id, &format!("weight_{k}"), gm.weights()[k], n, seed));
        }
    }
    Ok(())
}

fn write_samples(out: &mut Output, samples: &[Vec<f64>]) -> Result<()> {
    out.write("samples.csv", &samples_csv(samples))?;
    if samples.first().is_some_and(|s| s.len() == 2) {
        out.write("hist.pgm", &histogram_pgm(samples))?;
    }
    Ok(())
}

fn sample(p: &Prepared, out: &mut Output) -> Result<()> {
    let s = p.config.sample.as_ref().expect("checked");
    let shape = p.sample_shape()?;
    let config = p.sampler.clone().with_record(s.trajectory);
    let (cond, g) = (&p.config.cond, &p.config.guidance);
    let model = p.model("sample.model", &s.model)?.denoiser();
    let texture = s.texture_model.as_ref().map(|x| p.model("sample.texture_model", x)).transpose()?;
    let trajs = run_chains(s.chains, &RngStream::new(p.seed), |rng| match texture {
        Some(x) => time_decoupled_sample(&model, &x.denoiser(), s.t_struct, &shape, cond, g, &config, &p.schedule, rng),
        None => sample_loop(&model, &shape, cond, g, &config, &p.schedule, rng),
    })?;
    let codec = s.codec.as_ref().map(|c| p.codec("sample.codec", c)).transpose()?;
    let samples = trajs
        .iter()
        .map(|t| Ok(codec.map(|c| c.decode(&t.x0)).transpose()?.unwrap_or_else(|| t.x0.clone()).to_f64()))
        .collect::<Result<Vec<_>>>()?;
    write_samples(out, &samples)?;
    if s.trajectory {
        out.write("trajectory.csv", &trajectory_csv(&trajs.iter().collect::<Vec<_>>(), 0))?;
    }
    let reference = match (&s.reference, &s.texture_model, &s.codec) {
        (Some(r), _, _) => Some(r.as_str()),
        (None, None, None) => Some(s.model.as_str()),
        _ => None,
    };
    let mut rows = Vec::new();
    if let Some(r) = reference {
        let r = p.model("sample.reference", r)?;
        if r.exact_summary().is_some() && samples.len() >= 2 {
            score("sample", &samples, r, p.seed, &mut rows)?;
        }
    }
    out.write("metrics.csv", &metrics_csv(&rows)?)
}

/// Lag-1 autocorrelation and variance of the noise carried into the
/// high-res chain, for the run's bridge and for naive latent upsampling
/// of the same low-res state.
struct Whiteness {
    coop: Option<(f64, f64)>,
    naive: Option<(f64, f64)>,
}

fn whiteness(p: &Prepared, z_low: &Grid, z_high: &Grid, t_low: usize, coop: bool) -> Result<Whiteness> {
    let plan = p.fusion_plan()?;
    let (high, low) = (&plan.a, &plan.b);
    let up: ResolutionOp = plan.up.expect("resolution mode");
    let eps = guided_prediction(low.model, z_low, t_low, &low.cond, &low.guidance)?;
    let clean = high.codec.encode(&up.apply(&low.codec.decode(&predict_x0(z_low, t_low, &eps, &p.schedule)?)?)?)?;
    let stats = |z: &Grid| -> Result<(f64, f64)> {
        let n = invert_to_eps(z, t_low, &clean, &p.schedule)?;
        let m = n.mean();
        let var = n.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n.len() as f64;
        Ok((lag1_autocorr(&n)?, var))
    };
    let naive = match naive_upsample_latent(z_low, up.factor) {
        Ok(z) if z.shape() == clean.shape() => Some(stats(&z)?),
        _ => None,
    };
    Ok(Whiteness { coop: if coop { Some(stats(z_high)?) } else { None }, naive })
}

fn fuse(p: &Prepared, out: &mut Output) -> Result<()> {
    let f = p.config.fuse.as_ref().expect("checked");
    let mut plan = p.fusion_plan()?;
    let resolution = matches!(f.mode, FusionMode::Resolution { .. });
    plan.sampler = plan.sampler.with_record(f.trajectory || resolution);
    let root = RngStream::new(p.seed);
    let mut rows = Vec::new();
    let (samples, trajs): (Vec<Vec<f64>>, Vec<(Trajectory, Trajectory)>) = match f.mode {
        FusionMode::Latent { .. } => {
            let runs = run_chains(f.chains, &root, |rng| coop_latent_sample(&plan, &p.schedule, rng))?;
            runs.into_iter().map(|r| (r.x0.to_f64(), (r.chain_a, r.chain_b))).unzip()
        }
        FusionMode::Resolution { t_low, upsample } => {
            let runs = run_chains(f.chains, &root, |rng| coop_resolution_sample(&plan, &p.schedule, rng))?;
            let (mut coop, mut naive) = (Vec::new(), Vec::new());
            for r in &runs {
                let z_high = &r.high.states.first().expect("recorded").1;
                let w = whiteness(p, &r.z_low, z_high, t_low, upsample == UpsampleMode::Coop)?;
                coop.extend(w.coop);
                naive.extend(w.naive);
            }
            let n = runs.len();
            for (name, v) in [("coop", &coop), ("naive", &naive)] {
                if !v.is_empty() {
                    let k = v.len() as f64;
                    let rho = v.iter().map(|x| x.0).sum::<f64>() / k;
                    let var = v.iter().map(|x| x.1).sum::<f64>() / k;
                    rows.push(MetricRow::new("fuse", &format!("{name}_rho"), rho, n, p.seed));
                    rows.push(MetricRow::new("fuse", &format!("{name}_noise_var"), var, n, p.seed));
                }
            }
            runs.into_iter()
                .map(|mut r| {
                    if !f.trajectory {
                        r.high.states.clear();
                    }
                    let low = Trajectory { states: r.low, x0: r.z_low };
                    (r.x0.to_f64(), (r.high, low))
                })
                .unzip()
        }
    };
    write_samples(out, &samples)?;
    if f.trajectory {
        let b_end = match f.mode {
            FusionMode::Resolution { t_low, .. } => t_low,
            FusionMode::Latent { .. } => 0,
        };
        out.write("trajectory.csv", &trajectory_csv(&trajs.iter().map(|t| &t.0).collect::<Vec<_>>(), 0))?;
        out.write("trajectory_b.csv", &trajectory_csv(&trajs.iter().map(|t| &t.1).collect::<Vec<_>>(), b_end))?;
    }
    if let Some(r) = &f.reference {
        if samples.len() >= 2 {
            score("fuse", &samples, p.model("fuse.reference", r)?, p.seed, &mut rows)?;
        }
    }
    out.write("metrics.csv", &metrics_csv(&rows)?)
}

fn train(p: &Prepared, out: &mut Output) -> Result<()> {
    let t = p.config.train.as_ref().expect("checked");
    let spec = p.train_spec()?;
    let root = RngStream::new(p.seed);
    let source = |name: &str| MixtureSource {
        mixture: p.models[name].mixture().expect("checked").clone(),
        labelled: t.data.labelled,
    };
    let finite = |src: MixtureSource, n: usize, stream: u64| Dataset::sample_from(&src, n, &mut root.split(stream));
    let high = source(&t.data.high);
    let data: Box<dyn DataSource<f64>> = match t.role {
        TrainRole::Structure => {
            let hi = finite(high, t.data.n_high.expect("checked"), 0xDA7A);
            let low = source(t.data.low.as_ref().expect("checked"));
            let lo = finite(low, t.data.n_low.expect("checked"), 0xDA7B);
            Box::new(make_structure_pool(&hi, &lo, &ResolutionOp::up(t.data.factor)?)?)
        }
        TrainRole::Texture if t.data.low.is_some() => {
            let low = source(t.data.low.as_ref().expect("checked"));
            match t.data.n_low {
                Some(n) => Box::new(finite(low, n, 0xDA7B)),
                None => Box::new(low),
            }
        }
        _ => match t.data.n_high {
            Some(n) => Box::new(finite(high, n, 0xDA7A)),
            None => Box::new(high),
        },
    };
    let model = MlpDenoiser::new(t.mlp.clone(), &mut root.split(1))?;
    let (model, curve) = train_denoiser(model, data.as_ref(), &spec, &p.schedule, &mut root.split(2))?;
    save_mlp(&model, &out.dir.join("model.bin"))?;
    out.artifacts.push("model.bin".into());
    let window = 100.min(curve.losses.len()).max(1);
    let smooth = curve.smoothed(window);
    let mut s = String::from("step,loss,smoothed\n");
    for (i, (l, m)) in curve.losses.iter().zip(&smooth).enumerate() {
        let _ = writeln!(s, "{i},{l},{m}");
    }
    out.write("loss_curve.csv", s.as_bytes())?;
    let rows = vec![
        MetricRow::new("train", "params", model.num_params() as f64, spec.steps, p.seed),
        MetricRow::new("train", "final_smoothed_loss", *smooth.last().unwrap_or(&f64::NAN), window, p.seed),
    ];
    out.write("metrics.csv", &metrics_csv(&rows)?)
}

fn seed_list(seeds: &Option<Vec<u64>>, seed: u64) -> Vec<u64> {
    seeds.clone().unwrap_or_else(|| vec![seed])
}

fn join_seeds(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

fn ablate(p: &Prepared, out: &mut Output) -> Result<()> {
    let a = p.config.ablate.as_ref().expect("checked");
    let seeds = seed_list(&a.seeds, p.seed);
    let mut sums = vec![0.0; a.values.len()];
    for &seed in &seeds {
        for (sum, (_, f)) in sums.iter_mut().zip(ablate_tstruct(&a.strategy, &a.values, &p.schedule, seed)?) {
            *sum += f;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / seeds.len() as f64).collect();
    let mut s = String::from("t_struct,frechet,seeds\n");
    for (v, m) in a.values.iter().zip(&means) {
        let _ = writeln!(s, "{v},{m},{}", join_seeds(&seeds));
    }
    out.write("ablate.csv", s.as_bytes())?;
    let best = means.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).map(|(i, _)| a.values[i]).expect("nonempty");
    println!("argmin t_struct = {best}");
    Ok(())
}

fn compare(p: &Prepared, out: &mut Output) -> Result<()> {
    let c = p.config.compare.as_ref().expect("checked");
    let seeds = seed_list(&c.seeds, p.seed);
    let mut acc = Vec::new();
    for &seed in &seeds {
        let rows = compare_strategies(&c.strategy, &p.schedule, seed)?;
        if acc.is_empty() {
            acc = rows.into_iter().map(|r| (r, 0.0)).collect();
            for (r, sum) in &mut acc {
                *sum = r.frechet;
            }
        } else {
            for ((_, sum), r) in acc.iter_mut().zip(rows) {
                *sum += r.frechet;
            }
        }
    }
    let mut s = String::from("arm,params,optimizer_steps,param_x_steps,frechet,seeds\n");
    for (r, sum) in &acc {
        let mean = sum / seeds.len() as f64;
        let _ = writeln!(s, "{},{},{},{},{mean},{}", r.arm, r.params, r.steps, r.param_steps, join_seeds(&seeds));
        println!("{:<30} params {:>6}  param x steps {:>10}  frechet {mean:.4}", r.arm, r.params, r.param_steps);
    }
    out.write("compare.csv", s.as_bytes())
}

fn eval(p: &Prepared, out: &mut Output) -> Result<()> {
    let base = &p.base;
    let e = p.config.eval.as_ref().expect("checked");
    let samples = read_samples_csv(&base.join(&e.samples))?;
    let mut rows = Vec::new();
    match (&e.reference, &e.reference_samples) {
        (Some(r), _) => {
            let model = p.model("eval.reference", r)?;
            let exact: GaussianSummary = model.exact_summary().expect("checked")?;
            if exact.dim() != samples[0].len() {
                return Err(Error::Config(format!(
                    "eval.reference: model has dimension {}, samples have {}",
                    exact.dim(),
                    samples[0].len()
                )));
            }
            score("eval", &samples, model, p.seed, &mut rows)?;
        }
        (None, Some(path)) => {
            let other = read_samples_csv(&base.join(path))?;
            let d = gaussian_frechet(&fit_gaussian_rows(&samples)?, &fit_gaussian_rows(&other)?)?;
            rows.push(MetricRow::new("eval", "frechet", d, samples.len(), p.seed));
        }
        (None, None) => unreachable!("checked"),
    }
    if samples[0].len() == 2 {
        out.write("hist.pgm", &histogram_pgm(&samples))?;
    }
    out.write("metrics.csv", &metrics_csv(&rows)?)
}
