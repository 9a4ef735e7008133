//! Pixel-grid resolution changes: average-pool down, bilinear up.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};
use crate::numerics::{Grid, Real};

/// Where output sites fall on the source grid when upsampling `H -> H*f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Output site `i` samples source coordinate `i / f`, clamped to the last
    /// source row. Every source value is reproduced exactly at site `i*f`
    /// and the site halfway between two sources (f = 2) is their plain mean.
    #[default]
    Source,
    /// Output site `i` samples `i * (H-1) / (H*f - 1)`: the first and last
    /// sites coincide with the source corners, interior sites do not.
    Corners,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    AveragePoolDown,
    BilinearUp,
}

/// Integer-factor resolution operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionOp {
    pub factor: usize,
    pub mode: ResampleMode,
    #[serde(default)]
    pub alignment: Alignment,
}

impl ResolutionOp {
    pub fn up(factor: usize) -> Result<Self> {
        Self::validated(factor, ResampleMode::BilinearUp)
    }

    pub fn down(factor: usize) -> Result<Self> {
        Self::validated(factor, ResampleMode::AveragePoolDown)
    }

    fn validated(factor: usize, mode: ResampleMode) -> Result<Self> {
        if factor < 2 {
            return Err(param_err!("resolution factor must be >= 2, got {factor}"));
        }
        Ok(Self { factor, mode, alignment: Alignment::Source })
    }

    pub fn with_alignment(mut self, alignment: Alignment) -> Self {
        self.alignment = alignment;
        self
    }

    pub fn apply<T: Real>(&self, x: &Grid<T>) -> Result<Grid<T>> {
        match self.mode {
            ResampleMode::AveragePoolDown => downsample(x, self.factor),
            ResampleMode::BilinearUp => upsample_aligned(x, self.factor, self.alignment),
        }
    }

    /// Output shape for a rank-2 input shape.
    pub fn output_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let [h, w] = shape else {
            return Err(shape_err!("resolution ops act on rank-2 grids, got {:?}", shape));
        };
        let f = self.factor;
        match self.mode {
            ResampleMode::BilinearUp => Ok(vec![h * f, w * f]),
            ResampleMode::AveragePoolDown => {
                if h % f != 0 || w % f != 0 {
                    return Err(shape_err!("{h}x{w} not divisible by factor {f}"));
                }
                Ok(vec![h / f, w / f])
            }
        }
    }
}

/// Mean over each `f x f` block.
pub fn downsample<T: Real>(x: &Grid<T>, factor: usize) -> Result<Grid<T>> {
    let (h, w) = x.dims2()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(shape_err!("{h}x{w} not divisible by factor {factor}"));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::of((factor * factor) as f64);
    let mut out = Vec::with_capacity(oh * ow);
    for bi in 0..oh {
        for bj in 0..ow {
            let mut acc = T::zero();
            for i in bi * factor..(bi + 1) * factor {
                for j in bj * factor..(bj + 1) * factor {
                    acc += x.at2(i, j);
                }
            }
            out.push(acc * inv);
        }
    }
    Grid::new(vec![oh, ow], out)
}

/// Bilinear upsampling with the default [`Alignment::Source`] convention.
pub fn upsample_pixel<T: Real>(x: &Grid<T>, factor: usize) -> Result<Grid<T>> {
    upsample_aligned(x, factor, Alignment::Source)
}

/// Bilinear upsampling applied straight to a noisy intermediate latent.
///
/// Same arithmetic as [`upsample_pixel`]; exists as the baseline whose output
/// noise is spatially correlated and under-dispersed.
pub fn naive_upsample_latent<T: Real>(z_t: &Grid<T>, factor: usize) -> Result<Grid<T>> {
    upsample_aligned(z_t, factor, Alignment::Source)
}

pub fn upsample_aligned<T: Real>(x: &Grid<T>, factor: usize, alignment: Alignment) -> Result<Grid<T>> {
    if factor < 2 {
        return Err(param_err!("upsampling factor must be >= 2, got {factor}"));
    }
    let (h, w) = x.dims2()?;
    let rows = axis_weights::<T>(h, factor, alignment);
    let cols = axis_weights::<T>(w, factor, alignment);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &(i0, i1, a) in &rows {
        for &(j0, j1, b) in &cols {
            let top = x.at2(i0, j0) * (T::one() - b) + x.at2(i0, j1) * b;
            let bottom = x.at2(i1, j0) * (T::one() - b) + x.at2(i1, j1) * b;
            out.push(top * (T::one() - a) + bottom * a);
        }
    }
    Grid::new(vec![h * factor, w * factor], out)
}

/// Per output index: (lower source, upper source, weight on upper).
fn axis_weights<T: Real>(n: usize, factor: usize, alignment: Alignment) -> Vec<(usize, usize, T)> {
    let m = n * factor;
    (0..m)
        .map(|i| {
            let (lo, frac) = match alignment {
                Alignment::Source => {
                    let lo = i / factor;
                    if lo >= n - 1 {
                        (n - 1, 0.0)
                    } else {
                        (lo, (i % factor) as f64 / factor as f64)
                    }
                }
                Alignment::Corners => {
                    if n == 1 {
                        (0, 0.0)
                    } else {
                        let s = i as f64 * (n - 1) as f64 / (m - 1) as f64;
                        let lo = (s.floor() as usize).min(n - 1);
                        (lo, s - lo as f64)
                    }
                }
            };
            let hi = (lo + 1).min(n - 1);
            (lo, hi, T::of(frac))
        })
        .collect()
}

/// Analytic variance of each upsampled site when the input is i.i.d. unit
/// variance: the squared bilinear weights summed over contributing sources.
pub fn upsampled_site_variance(h: usize, w: usize, factor: usize, alignment: Alignment) -> Vec<f64> {
    let per_axis = |n| -> Vec<f64> {
        axis_weights::<f64>(n, factor, alignment)
            .into_iter()
            .map(|(lo, hi, a)| if lo == hi { 1.0 } else { (1.0 - a).powi(2) + a * a })
            .collect()
    };
    let (r, c) = (per_axis(h), per_axis(w));
    r.iter().flat_map(|a| c.iter().map(move |b| a * b)).collect()
}
