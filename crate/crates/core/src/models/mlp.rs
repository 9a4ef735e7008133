//! Small tanh MLP noise predictor with hand-written reverse mode.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Error, Result};
use crate::models::{Condition, Denoiser, LabelSet};
use crate::numerics::{Grid, Real, RngStream};

/// Fully connected network: tanh on hidden layers, linear output, and an
/// optional linear input-to-output skip path.
///
/// Parameters live in one flat vector, layer by layer, each layer stored as
/// its `out x in` weight matrix (row-major) followed by its bias; the skip
/// matrix (`out x in`, no bias) comes last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T = f64> {
    widths: Vec<usize>,
    skip: bool,
    params: Vec<T>,
}

/// Activations of one forward pass over a batch, kept for backprop.
pub struct Activations<T> {
    rows: usize,
    layers: Vec<Vec<T>>,
}

impl<T> Activations<T> {
    pub fn output(&self) -> &[T] {
        self.layers.last().expect("at least input and output")
    }
}

impl<T: Real> Mlp<T> {
    /// Xavier-uniform weights, zero biases, zero skip matrix.
    pub fn new(widths: Vec<usize>, skip: bool, rng: &mut RngStream) -> Result<Self> {
        let mut net = Self::zeros(widths, skip)?;
        let mut offset = 0;
        for l in 0..net.num_layers() {
            let (n_in, n_out) = (net.widths[l], net.widths[l + 1]);
            let a = (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + n_in * n_out] {
                *p = T::of(a * (2.0 * rng.uniform() - 1.0));
            }
            offset += n_in * n_out + n_out;
        }
        Ok(net)
    }

    pub fn zeros(widths: Vec<usize>, skip: bool) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(param_err!("network widths must list at least input and output sizes > 0"));
        }
        let mut n: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if skip {
            n += widths[0] * widths[widths.len() - 1];
        }
        Ok(Self { widths, skip, params: vec![T::zero(); n] })
    }

    pub fn from_params(widths: Vec<usize>, skip: bool, params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(widths, skip)?;
        if params.len() != net.params.len() {
            return Err(shape_err!("expected {} parameters, got {}", net.params.len(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NumericalDomain("non-finite network parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn has_skip(&self) -> bool {
        self.skip
    }

    fn skip_offset(&self) -> usize {
        self.params.len() - self.input_dim() * self.output_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn forward(&self, inputs: &[T], rows: usize) -> Activations<T> {
        assert_eq!(inputs.len(), rows * self.input_dim(), "input batch size");
        let mut layers = Vec::with_capacity(self.widths.len());
        layers.push(inputs.to_vec());
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let hidden = l + 1 < self.num_layers();
            let x = &layers[l];
            let mut y = vec![T::zero(); rows * n_out];
            for r in 0..rows {
                let xr = &x[r * n_in..(r + 1) * n_in];
                let yr = &mut y[r * n_out..(r + 1) * n_out];
                for (o, (wo, &bo)) in yr.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
                    let s = bo + wo.iter().zip(xr).map(|(&a, &c)| a * c).sum::<T>();
                    *o = if hidden { s.tanh() } else { s };
                }
            }
            layers.push(y);
        }
        if self.skip {
            let (n_in, n_out) = (self.input_dim(), self.output_dim());
            let s = &self.params[self.skip_offset()..];
            let y = layers.last_mut().expect("output layer");
            for r in 0..rows {
                let xr = &inputs[r * n_in..(r + 1) * n_in];
                for (o, so) in s.chunks_exact(n_in).enumerate() {
                    y[r * n_out + o] += so.iter().zip(xr).map(|(&a, &c)| a * c).sum::<T>();
                }
            }
        }
        Activations { rows, layers }
    }

    /// Parameter gradient given `d loss / d output` for every row.
    pub fn backward(&self, acts: &Activations<T>, d_output: &[T]) -> Vec<T> {
        let rows = acts.rows;
        assert_eq!(d_output.len(), rows * self.output_dim());
        let mut grads = vec![T::zero(); self.params.len()];
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for l in 0..self.num_layers() {
            offsets.push(off);
            off += self.widths[l] * self.widths[l + 1] + self.widths[l + 1];
        }
        if self.skip {
            let (n_in, n_out) = (self.input_dim(), self.output_dim());
            let gs = &mut grads[self.skip_offset()..];
            for r in 0..rows {
                let xr = &acts.layers[0][r * n_in..(r + 1) * n_in];
                for (o, g) in gs.chunks_exact_mut(n_in).enumerate() {
                    let d = d_output[r * n_out + o];
                    for (gi, &xi) in g.iter_mut().zip(xr) {
                        *gi += d * xi;
                    }
                }
            }
        }
        // delta = d loss / d pre-activation of the current layer
        let mut delta = d_output.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let base = offsets[l];
            let x = &acts.layers[l];
            {
                let (gw, gb) = grads[base..base + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for r in 0..rows {
                    let xr = &x[r * n_in..(r + 1) * n_in];
                    let dr = &delta[r * n_out..(r + 1) * n_out];
                    for (o, &d) in dr.iter().enumerate() {
                        gb[o] += d;
                        for (g, &xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                            *g += d * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[base..base + n_in * n_out];
            let mut prev = vec![T::zero(); rows * n_in];
            for r in 0..rows {
                let dr = &delta[r * n_out..(r + 1) * n_out];
                let pr = &mut prev[r * n_in..(r + 1) * n_in];
                for (o, &d) in dr.iter().enumerate() {
                    for (p, &wi) in pr.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                // previous layer is hidden: tanh' = 1 - y^2
                let yr = &x[r * n_in..(r + 1) * n_in];
                for (p, &y) in pr.iter_mut().zip(yr) {
                    *p *= T::one() - y * y;
                }
            }
            delta = prev;
        }
        grads
    }
}

/// How a latent grid is turned into network input rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputLayout {
    /// Whole latent in, whole noise prediction out (fixed shape).
    Dense { shape: Vec<usize> },
    /// One row per pixel of a rank-2 grid: the `(2r+1)^2` neighbourhood
    /// (edge-clamped), a `context x context` average-pooled summary of the
    /// whole grid and the pixel's normalized coordinates. Works at any
    /// resolution.
    Patch { radius: usize, context: usize },
}

/// Architecture and conditioning layout of an [`MlpDenoiser`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layout: InputLayout,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    #[serde(default)]
    pub labels: LabelSet,
    /// Known grid side lengths; a grid's index in this list is embedded.
    #[serde(default)]
    pub resolutions: Vec<usize>,
    #[serde(default)]
    pub res_embed_dim: usize,
    /// Add a learned linear map from the input row straight to the output.
    #[serde(default)]
    pub skip: bool,
    /// `T` of the schedule the model was trained for.
    pub schedule_steps: usize,
}

impl MlpConfig {
    fn validate(&self) -> Result<()> {
        if !self.time_embed_dim.is_multiple_of(2) || !self.res_embed_dim.is_multiple_of(2) {
            return Err(param_err!("embedding sizes must be even"));
        }
        if self.schedule_steps == 0 {
            return Err(param_err!("schedule_steps must be positive"));
        }
        if self.res_embed_dim > 0 && self.resolutions.is_empty() {
            return Err(param_err!("resolution embedding needs a list of resolutions"));
        }
        if let InputLayout::Dense { shape } = &self.layout {
            if shape.is_empty() || shape.contains(&0) {
                return Err(param_err!("dense layout needs a nonempty shape"));
            }
        }
        Ok(())
    }

    fn embed_len(&self) -> usize {
        self.time_embed_dim + self.labels.one_hot_len() + self.res_embed_dim
    }

    pub fn input_dim(&self) -> usize {
        match &self.layout {
            InputLayout::Dense { shape } => shape.iter().product::<usize>() + self.embed_len(),
            InputLayout::Patch { radius, context } => {
                (2 * radius + 1).pow(2) + context * context + 2 + self.embed_len()
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.layout {
            InputLayout::Dense { shape } => shape.iter().product(),
            InputLayout::Patch { .. } => 1,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.hidden);
        w.push(self.output_dim());
        w
    }
}

/// Sinusoidal features of `t / T` at frequencies `pi * 2^i`.
pub fn time_embedding(t: usize, steps: usize, dim: usize) -> Vec<f64> {
    let phase = t as f64 / steps as f64;
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let w = std::f64::consts::PI * (1u64 << i) as f64;
        out.push((w * phase).sin());
        out.push((w * phase).cos());
    }
    out
}

/// Sinusoidal features of a resolution index at frequencies `pi / 2^(i+1)`.
pub fn resolution_embedding(index: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let w = std::f64::consts::PI / (2u64 << i) as f64;
        out.push((w * index as f64).sin());
        out.push((w * index as f64).cos());
    }
    out
}

/// Trainable noise predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser<T = f64> {
    config: MlpConfig,
    net: Mlp<T>,
}

impl<T: Real> MlpDenoiser<T> {
    pub fn new(config: MlpConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let net = Mlp::new(config.widths(), config.skip, rng)?;
        Ok(Self { config, net })
    }

    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let net = Mlp::zeros(config.widths(), config.skip)?;
        Ok(Self { config, net })
    }

    pub fn from_parts(config: MlpConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let net = Mlp::from_params(config.widths(), config.skip, params)?;
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn params(&self) -> &[T] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        self.net.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.net.params().len()
    }

    fn embedding(&self, z: &Grid<T>, t: usize, cond: &Condition) -> Result<Vec<T>> {
        let c = &self.config;
        if t == 0 || t > c.schedule_steps {
            return Err(param_err!("timestep {t} outside [1, {}]", c.schedule_steps));
        }
        c.labels.check(cond)?;
        let mut e: Vec<T> = time_embedding(t, c.schedule_steps, c.time_embed_dim).into_iter().map(T::of).collect();
        let mut hot = vec![T::zero(); c.labels.one_hot_len()];
        hot[c.labels.one_hot_index(cond)] = T::one();
        e.extend(hot);
        if c.res_embed_dim > 0 {
            let side = z.shape()[0];
            let idx = c.resolutions.iter().position(|&r| r == side).ok_or_else(|| {
                shape_err!("grid side {side} is not one of the configured resolutions {:?}", c.resolutions)
            })?;
            e.extend(resolution_embedding(idx, c.res_embed_dim).into_iter().map(T::of));
        }
        Ok(e)
    }

    /// Network input rows for one latent; returns `(rows, row count)`.
    pub fn features(&self, z: &Grid<T>, t: usize, cond: &Condition) -> Result<(Vec<T>, usize)> {
        let emb = self.embedding(z, t, cond)?;
        match &self.config.layout {
            InputLayout::Dense { shape } => {
                z.expect_shape(shape)?;
                let mut row = z.data().to_vec();
                row.extend(emb);
                Ok((row, 1))
            }
            InputLayout::Patch { radius, context } => {
                let (h, w) = z.dims2()?;
                let r = *radius as isize;
                let ctx = pooled_context(z, h, w, *context);
                let mut rows = Vec::with_capacity(h * w * self.config.input_dim());
                for i in 0..h {
                    for j in 0..w {
                        for di in -r..=r {
                            for dj in -r..=r {
                                let ii = (i as isize + di).clamp(0, h as isize - 1) as usize;
                                let jj = (j as isize + dj).clamp(0, w as isize - 1) as usize;
                                rows.push(z.at2(ii, jj));
                            }
                        }
                        rows.extend_from_slice(&ctx);
                        rows.push(T::of(if h > 1 { i as f64 / (h - 1) as f64 } else { 0.0 }));
                        rows.push(T::of(if w > 1 { j as f64 / (w - 1) as f64 } else { 0.0 }));
                        rows.extend_from_slice(&emb);
                    }
                }
                Ok((rows, h * w))
            }
        }
    }

    pub fn mlp_predict_eps(&self, z_t: &Grid<T>, t: usize, cond: &Condition) -> Result<Grid<T>> {
        let (x, rows) = self.features(z_t, t, cond)?;
        let acts = self.net.forward(&x, rows);
        Grid::from_raw(z_t.shape().to_vec(), acts.output().to_vec()).ensure_finite("mlp eps")
    }

    /// Mean squared noise-prediction error over every predicted entry, and
    /// its exact gradient with respect to all parameters.
    pub fn loss_and_gradients(&self, batch: &[TrainExample<T>]) -> Result<(T, Vec<T>)> {
        if batch.is_empty() {
            return Err(param_err!("gradient batch must be nonempty"));
        }
        let mut x = Vec::new();
        let mut target = Vec::new();
        let mut rows = 0;
        for ex in batch {
            ex.z_t.same_shape(&ex.eps)?;
            let (f, r) = self.features(&ex.z_t, ex.t, &ex.cond)?;
            x.extend(f);
            target.extend_from_slice(ex.eps.data());
            rows += r;
        }
        let acts = self.net.forward(&x, rows);
        let out = acts.output();
        let n = T::of(out.len() as f64);
        let mut loss = T::zero();
        let d_out: Vec<T> = out
            .iter()
            .zip(&target)
            .map(|(&p, &y)| {
                let r = p - y;
                loss += r * r;
                T::of(2.0) * r / n
            })
            .collect();
        Ok((loss / n, self.net.backward(&acts, &d_out)))
    }
}

/// Gradients of the mean squared noise-prediction error over a batch.
pub fn mlp_gradients<T: Real>(model: &MlpDenoiser<T>, batch: &[TrainExample<T>]) -> Result<Vec<T>> {
    model.loss_and_gradients(batch).map(|(_, g)| g)
}

/// One regression example: noisy latent, timestep, condition, target noise.
#[derive(Debug, Clone)]
pub struct TrainExample<T = f64> {
    pub z_t: Grid<T>,
    pub t: usize,
    pub cond: Condition,
    pub eps: Grid<T>,
}

impl<T: Real> Denoiser<T> for MlpDenoiser<T> {
    fn predict_eps(&self, z: &Grid<T>, t: usize, cond: &Condition) -> Result<Grid<T>> {
        self.mlp_predict_eps(z, t, cond)
    }
}

fn pooled_context<T: Real>(z: &Grid<T>, h: usize, w: usize, c: usize) -> Vec<T> {
    if c == 0 {
        return Vec::new();
    }
    let mut sums = vec![T::zero(); c * c];
    let mut counts = vec![0usize; c * c];
    for i in 0..h {
        for j in 0..w {
            let cell = (i * c / h) * c + j * c / w;
            sums[cell] += z.at2(i, j);
            counts[cell] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { T::zero() } else { s / T::of(n as f64) })
        .collect()
}
