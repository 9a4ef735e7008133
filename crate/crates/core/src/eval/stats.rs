use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{param_err, shape_err, Error, Result};
use crate::models::GaussianMixture;
use crate::numerics::{Grid, Real};

/// Mean and unbiased covariance of a sample set, in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Summary of a known Gaussian (`n = 0` marks it as exact).
    pub fn exact(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(shape_err!("covariance must be {d}x{d}"));
        }
        let cov = DMatrix::from_row_slice(d, d, &cov);
        Ok(Self { mean: DVector::from_vec(mean), cov: (&cov + cov.transpose()) * 0.5, n: 0 })
    }
}

pub fn fit_gaussian<T: Real>(samples: &[Grid<T>]) -> Result<GaussianSummary> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|g| g.to_f64()).collect();
    fit_gaussian_rows(&rows)
}

/// Same as [`fit_gaussian`] over plain coordinate vectors.
pub fn fit_gaussian_rows(rows: &[Vec<f64>]) -> Result<GaussianSummary> {
    let d = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    if d == 0 {
        return Err(param_err!("cannot fit a Gaussian to empty samples"));
    }
    if n < d + 1 {
        return Err(param_err!("need at least {} samples for dimension {d}, got {n}", d + 1));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(shape_err!("samples have inconsistent dimensions"));
    }
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_column_slice(r) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianSummary { mean, cov, n })
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

/// Squared 2-Wasserstein distance between the Gaussians `a` and `b`.
pub fn gaussian_frechet(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(shape_err!("dimension mismatch: {} vs {}", a.dim(), b.dim()));
    }
    let dm = (&a.mean - &b.mean).norm_squared();
    let ra = psd_sqrt(&a.cov);
    let inner = &ra * &b.cov * &ra;
    let e = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let cross: f64 = e.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = dm + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::NumericalDomain("Frechet distance is not finite".into()));
    }
    Ok(d.max(0.0))
}

/// Mean of the horizontal and vertical one-pixel-shift Pearson correlations.
pub fn lag1_autocorr<T: Real>(x: &Grid<T>) -> Result<f64> {
    let (h, w) = x.dims2()?;
    if h < 2 || w < 2 {
        return Err(shape_err!("lag-1 autocorrelation needs at least 2x2, got {h}x{w}"));
    }
    let v = |i: usize, j: usize| x.at2(i, j).to_f64_lossy();
    let horiz = pearson((0..h).flat_map(|i| (0..w - 1).map(move |j| (i, j))).map(|(i, j)| (v(i, j), v(i, j + 1))))?;
    let vert = pearson((0..h - 1).flat_map(|i| (0..w).map(move |j| (i, j))).map(|(i, j)| (v(i, j), v(i + 1, j))))?;
    Ok(0.5 * (horiz + vert))
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> Result<f64> {
    let n = pairs.clone().count() as f64;
    let (sa, sb) = pairs.clone().fold((0.0, 0.0), |(sa, sb), (a, b)| (sa + a, sb + b));
    let (ma, mb) = (sa / n, sb / n);
    let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        cab += (a - ma) * (b - mb);
        caa += (a - ma) * (a - ma);
        cbb += (b - mb) * (b - mb);
    }
    if caa <= 0.0 || cbb <= 0.0 {
        return Err(Error::UndefinedStatistic("zero-variance grid has no autocorrelation".into()));
    }
    Ok(cab / (caa * cbb).sqrt())
}

/// Fraction of samples whose nearest component (squared distance scaled by
/// the component variance) is each `k`.
pub fn mixture_occupancy<T: Real>(samples: &[Grid<T>], gm: &GaussianMixture<T>) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(param_err!("occupancy needs at least one sample"));
    }
    let k = gm.num_components();
    let mut counts = vec![0usize; k];
    for s in samples {
        s.expect_shape(gm.shape())?;
        let mut best = (f64::INFINITY, 0);
        for (c, (mu, var)) in gm.means().iter().zip(gm.variances()).enumerate() {
            let d2 = s.sub(mu)?.norm2().to_f64_lossy().powi(2) / var.to_f64_lossy();
            if d2 < best.0 {
                best = (d2, c);
            }
        }
        counts[best.1] += 1;
    }
    let n = samples.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}
