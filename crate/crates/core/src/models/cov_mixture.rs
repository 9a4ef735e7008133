use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::codecs::upsample_pixel;
use crate::error::{param_err, shape_err, Error, Result};
use crate::models::{Condition, Denoiser, GaussianMixture};
use crate::numerics::{Grid, NoiseSchedule, Real, RngStream};

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
struct Component {
    mean: DVector<f64>,
    /// Orthonormal eigenvectors with nonzero eigenvalue, one per column.
    basis: DMatrix<f64>,
    eigvals: DVector<f64>,
}

/// Gaussian mixture with arbitrary (possibly singular) covariances, kept
/// as eigenpairs so that diffused densities cost `O(d r)` per component.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMixture {
    shape: Vec<usize>,
    weights: Vec<f64>,
    comps: Vec<Component>,
}

impl CovMixture {
    /// `covs` are row-major `d x d` and must be symmetric PSD.
    pub fn new(shape: Vec<usize>, weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<f64>>) -> Result<Self> {
        let d: usize = shape.iter().product();
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(param_err!("mixture needs matching nonempty weights/means/covariances"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(param_err!("mixture weights must be positive and sum to 1"));
        }
        let mut comps = Vec::with_capacity(k);
        for (m, c) in means.into_iter().zip(covs) {
            if m.len() != d || c.len() != d * d {
                return Err(shape_err!("component mean/covariance do not match dimension {d}"));
            }
            let c = DMatrix::from_row_slice(d, d, &c);
            if (&c - c.transpose()).abs().max() > 1e-10 {
                return Err(param_err!("covariance is not symmetric"));
            }
            comps.push(Component::new(DVector::from_vec(m), c)?);
        }
        Ok(Self { shape, weights: weights.iter().map(|w| w / total).collect(), comps })
    }

    pub fn from_isotropic<T: Real>(gm: &GaussianMixture<T>) -> Result<Self> {
        let d = gm.dim();
        let covs = gm
            .variances()
            .iter()
            .map(|v| DMatrix::<f64>::identity(d, d).scale(v.to_f64_lossy()).transpose().as_slice().to_vec())
            .collect();
        Self::new(
            gm.shape().to_vec(),
            gm.weights().iter().map(|w| w.to_f64_lossy()).collect(),
            gm.means().iter().map(Grid::to_f64).collect(),
            covs,
        )
    }

    /// Exact distribution of `A x` for `x` from this mixture; `map` is
    /// row-major `out_dim x d`.
    pub fn push_linear(&self, map: &[f64], out_shape: Vec<usize>) -> Result<Self> {
        let d = self.dim();
        let o: usize = out_shape.iter().product();
        if map.len() != o * d {
            return Err(shape_err!("linear map must be {o}x{d}"));
        }
        let a = DMatrix::from_row_slice(o, d, map);
        let mut comps = Vec::with_capacity(self.comps.len());
        for c in &self.comps {
            // A V diag(l) V^T A^T, computed through the low-rank factor
            let f = &a * &c.basis * DMatrix::from_diagonal(&c.eigvals.map(f64::sqrt));
            let cov = &f * f.transpose();
            comps.push(Component::new(&a * &c.mean, (&cov + cov.transpose()) * 0.5)?);
        }
        Ok(Self { shape: out_shape, weights: self.weights.clone(), comps })
    }

    /// Exact distribution of `upsample_pixel(x, factor)`.
    pub fn upsampled(&self, factor: usize) -> Result<Self> {
        let [h, w] = self.shape[..] else {
            return Err(shape_err!("upsampling needs a rank-2 mixture, got {:?}", self.shape));
        };
        let d = h * w;
        let o = d * factor * factor;
        let mut map = vec![0.0; o * d];
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let col = upsample_pixel(&Grid::new(vec![h, w], e)?, factor)?;
            for (i, v) in col.data().iter().enumerate() {
                map[i * d + j] = *v;
            }
        }
        self.push_linear(&map, vec![h * factor, w * factor])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        self.comps[k].mean.as_slice()
    }

    pub fn draw<T: Real>(&self, rng: &mut RngStream) -> (Grid<T>, usize) {
        let u = rng.uniform();
        let mut k = self.weights.len() - 1;
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let c = &self.comps[k];
        let e = DVector::from_fn(c.eigvals.len(), |i, _| c.eigvals[i].sqrt() * rng.normal());
        let x = &c.mean + &c.basis * e;
        (Grid::from_raw(self.shape.clone(), x.iter().map(|&v| T::of(v)).collect()), k)
    }

    /// Optimal noise prediction at signal fraction `abar < 1`.
    pub fn optimal_eps_at<T: Real>(&self, z: &Grid<T>, abar: f64) -> Result<Grid<T>> {
        z.expect_shape(&self.shape)?;
        if !(abar > 0.0 && abar < 1.0) {
            return Err(Error::NumericalDomain(format!("alpha_bar {abar} outside (0, 1)")));
        }
        let zv = DVector::from_iterator(z.len(), z.data().iter().map(|v| v.to_f64_lossy()));
        let (sa, noise) = (abar.sqrt(), 1.0 - abar);
        let d = self.dim() as f64;
        let mut logs = Vec::with_capacity(self.comps.len());
        let mut dirs = Vec::with_capacity(self.comps.len());
        for (c, w) in self.comps.iter().zip(&self.weights) {
            let u = &zv - c.mean.scale(sa);
            let proj = c.basis.tr_mul(&u);
            let total = c.eigvals.map(|l| abar * l + noise);
            let scaled = proj.component_div(&total);
            // (abar S + (1 - abar) I)^{-1} u split into the span and its complement
            let dir = (&u - &c.basis * &proj) / noise + &c.basis * &scaled;
            let quad = (u.norm_squared() - proj.norm_squared()) / noise + proj.dot(&scaled);
            let logdet = (d - c.eigvals.len() as f64) * noise.ln() + total.iter().map(|t| t.ln()).sum::<f64>();
            logs.push(w.ln() - 0.5 * (logdet + quad));
            dirs.push(dir);
        }
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        let mut out = DVector::zeros(zv.len());
        for (l, dir) in logs.iter().zip(&dirs) {
            out.axpy((l - m).exp() / norm, dir, 1.0);
        }
        out *= noise.sqrt();
        Grid::new(self.shape.clone(), out.iter().map(|&v| T::of(v)).collect())
    }

    /// Exact mean and covariance (row-major).
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        for (c, w) in self.comps.iter().zip(&self.weights) {
            mean.axpy(*w, &c.mean, 1.0);
        }
        let mut cov = DMatrix::zeros(d, d);
        for (c, w) in self.comps.iter().zip(&self.weights) {
            let f = &c.basis * DMatrix::from_diagonal(&c.eigvals.map(f64::sqrt));
            cov += (&f * f.transpose()).scale(*w);
            let dm = &c.mean - &mean;
            cov.ger(*w, &dm, &dm, 1.0);
        }
        (mean.as_slice().to_vec(), cov.transpose().as_slice().to_vec())
    }
}

impl Component {
    fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let e = SymmetricEigen::new(cov);
        let top = e.eigenvalues.iter().copied().fold(0.0, f64::max);
        if e.eigenvalues.iter().any(|&l| l < -1e-10 * top.max(1.0)) {
            return Err(param_err!("covariance is not positive semidefinite"));
        }
        let keep: Vec<usize> = (0..e.eigenvalues.len()).filter(|&i| e.eigenvalues[i] > RANK_TOL * top).collect();
        let basis = e.eigenvectors.select_columns(&keep);
        let eigvals = DVector::from_iterator(keep.len(), keep.iter().map(|&i| e.eigenvalues[i]));
        Ok(Self { mean, basis, eigvals })
    }
}

/// Analytic denoiser for a [`CovMixture`]; ignores the condition.
#[derive(Debug, Clone)]
pub struct CovGmDenoiser<T = f64> {
    pub mixture: CovMixture,
    pub schedule: NoiseSchedule<T>,
}

impl<T: Real> Denoiser<T> for CovGmDenoiser<T> {
    fn predict_eps(&self, z: &Grid<T>, t: usize, _cond: &Condition) -> Result<Grid<T>> {
        self.schedule.check_timestep(t)?;
        self.mixture.optimal_eps_at(z, self.schedule.alpha_bar(t).to_f64_lossy())
    }
}
