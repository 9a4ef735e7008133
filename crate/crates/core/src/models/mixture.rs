use serde::{Deserialize, Serialize};

use crate::codecs::LinearCodec;
use crate::error::{param_err, shape_err, Error, Result};
use crate::numerics::{Grid, NoiseSchedule, Real, RngStream};

/// Isotropic Gaussian mixture over grids of one fixed shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<T = f64> {
    shape: Vec<usize>,
    weights: Vec<T>,
    means: Vec<Grid<T>>,
    variances: Vec<T>,
}

/// JSON form of a mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub shape: Vec<usize>,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl<T: Real> GaussianMixture<T> {
    /// Weights are renormalized; they must be positive and already sum to
    /// one within `1e-9` so that typos are not silently absorbed.
    pub fn new(weights: Vec<f64>, means: Vec<Grid<T>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(param_err!(
                "mixture needs matching nonempty weights/means/variances, got {}/{}/{}",
                k,
                means.len(),
                variances.len()
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(param_err!("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(param_err!("mixture weights sum to {total}, expected 1"));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(param_err!("mixture variances must be strictly positive"));
        }
        let shape = means[0].shape().to_vec();
        for m in &means {
            m.expect_shape(&shape)?;
        }
        Ok(Self {
            shape,
            weights: weights.iter().map(|w| T::of(w / total)).collect(),
            means,
            variances: variances.into_iter().map(T::of).collect(),
        })
    }

    pub fn single(mean: Grid<T>, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn from_record(rec: &MixtureRecord) -> Result<Self> {
        let means = rec
            .means
            .iter()
            .map(|m| Grid::from_f64(rec.shape.clone(), m))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rec.weights.clone(), means, rec.variances.clone())
    }

    pub fn to_record(&self) -> MixtureRecord {
        MixtureRecord {
            shape: self.shape.clone(),
            weights: self.weights.iter().map(|w| w.to_f64_lossy()).collect(),
            means: self.means.iter().map(|m| m.to_f64()).collect(),
            variances: self.variances.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Grid<T>] {
        &self.means
    }

    pub fn variances(&self) -> &[T] {
        &self.variances
    }

    /// The mixture restricted to one component.
    pub fn component(&self, k: usize) -> Result<Self> {
        if k >= self.num_components() {
            return Err(param_err!("component {k} out of range ({} components)", self.num_components()));
        }
        Ok(Self {
            shape: self.shape.clone(),
            weights: vec![T::one()],
            means: vec![self.means[k].clone()],
            variances: vec![self.variances[k]],
        })
    }

    /// Draws one sample and reports the component it came from.
    pub fn draw(&self, rng: &mut RngStream) -> (Grid<T>, usize) {
        let u = T::of(rng.uniform());
        let mut k = self.weights.len() - 1;
        let mut acc = T::zero();
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let sd = self.variances[k].sqrt();
        let data = self.means[k].data().iter().map(|&m| m + sd * T::of(rng.normal())).collect();
        (Grid::from_raw(self.shape.clone(), data), k)
    }

    /// Log-responsibilities of each component for `z` under the diffused
    /// mixture at signal fraction `abar`, plus the per-component total
    /// variance `abar * sigma^2 + 1 - abar`.
    fn log_terms(&self, z: &[T], abar: T) -> (Vec<T>, Vec<T>) {
        let d = T::of(self.dim() as f64);
        let sa = abar.sqrt();
        let two_pi = T::of(std::f64::consts::TAU);
        let mut logs = Vec::with_capacity(self.num_components());
        let mut total_var = Vec::with_capacity(self.num_components());
        for k in 0..self.num_components() {
            let s2 = abar * self.variances[k] + (T::one() - abar);
            let sq: T = z.iter().zip(self.means[k].data()).map(|(&zi, &mi)| (zi - sa * mi).powi(2)).sum();
            logs.push(self.weights[k].ln() - T::of(0.5) * d * (two_pi * s2).ln() - sq / (T::of(2.0) * s2));
            total_var.push(s2);
        }
        (logs, total_var)
    }

    /// `log p_t(z)` for the mixture diffused to signal fraction `abar`.
    pub fn log_density(&self, z: &Grid<T>, abar: T) -> Result<T> {
        z.expect_shape(&self.shape)?;
        let (logs, _) = self.log_terms(z.data(), abar);
        Ok(log_sum_exp(&logs))
    }

    /// Posterior component probabilities of `z` at signal fraction `abar`.
    pub fn responsibilities(&self, z: &Grid<T>, abar: T) -> Result<Vec<T>> {
        z.expect_shape(&self.shape)?;
        let (logs, _) = self.log_terms(z.data(), abar);
        let lse = log_sum_exp(&logs);
        Ok(logs.iter().map(|&l| (l - lse).exp()).collect())
    }

    /// Optimal noise prediction `-sqrt(1 - abar) * grad log p_t(z)`.
    pub fn optimal_eps_at(&self, z: &Grid<T>, abar: T) -> Result<Grid<T>> {
        z.expect_shape(&self.shape)?;
        let (logs, total_var) = self.log_terms(z.data(), abar);
        let lse = log_sum_exp(&logs);
        let sa = abar.sqrt();
        let scale = (T::one() - abar).sqrt();
        let mut out = vec![T::zero(); z.len()];
        for k in 0..self.num_components() {
            let r = (logs[k] - lse).exp();
            if r == T::zero() {
                continue;
            }
            let c = r / total_var[k];
            for ((o, &zi), &mi) in out.iter_mut().zip(z.data()).zip(self.means[k].data()) {
                *o += c * (zi - sa * mi);
            }
        }
        for o in &mut out {
            *o *= scale;
        }
        Grid::from_raw(self.shape.clone(), out).ensure_finite("mixture eps")
    }

    /// Exact pushforward through an orthogonal codec; isotropy is preserved
    /// only when the forward map is orthogonal.
    pub fn push_forward(&self, codec: &LinearCodec<T>) -> Result<Self> {
        if codec.pixel_shape() != self.shape.as_slice() {
            return Err(shape_err!(
                "codec pixel shape {:?} does not match mixture shape {:?}",
                codec.pixel_shape(),
                self.shape
            ));
        }
        if !codec.is_orthogonal(1e-9) {
            return Err(Error::Config("mixture pushforward requires an orthogonal codec".into()));
        }
        let means = self.means.iter().map(|m| codec.encode(m)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shape: codec.latent_shape().to_vec(),
            weights: self.weights.clone(),
            means,
            variances: self.variances.clone(),
        })
    }

    /// Exact mean and covariance (row-major) of the mixture, in `f64`.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (acc, v) in mean.iter_mut().zip(m.data()) {
                *acc += w.to_f64_lossy() * v.to_f64_lossy();
            }
        }
        let mut cov = vec![0.0; d * d];
        for ((w, m), s2) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            let w = w.to_f64_lossy();
            let dm: Vec<f64> = m.data().iter().zip(&mean).map(|(v, mu)| v.to_f64_lossy() - mu).collect();
            for i in 0..d {
                cov[i * d + i] += w * s2.to_f64_lossy();
                for j in 0..d {
                    cov[i * d + j] += w * dm[i] * dm[j];
                }
            }
        }
        (mean, cov)
    }
}

/// Optimal noise prediction for the mixture at timestep `t` of `schedule`.
pub fn gm_predict_eps<T: Real>(
    gm: &GaussianMixture<T>,
    z_t: &Grid<T>,
    t: usize,
    schedule: &NoiseSchedule<T>,
) -> Result<Grid<T>> {
    schedule.check_timestep(t)?;
    gm.optimal_eps_at(z_t, schedule.alpha_bar(t))
}

fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}
