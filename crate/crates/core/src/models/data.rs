//! Training data sources and the structure-generator pool.

use crate::codecs::ResolutionOp;
use crate::error::{param_err, shape_err, Result};
use crate::models::{Condition, GaussianMixture};
use crate::numerics::{Grid, Real, RngStream};

/// Something training can draw `(x0, condition)` pairs from.
pub trait DataSource<T: Real>: Send + Sync {
    fn draw(&self, rng: &mut RngStream) -> (Grid<T>, Condition);
}

/// Fresh draws from a mixture; the condition is the component's class
/// label when `labelled` is set.
#[derive(Debug, Clone)]
pub struct MixtureSource<T = f64> {
    pub mixture: GaussianMixture<T>,
    pub labelled: bool,
}

impl<T: Real> DataSource<T> for MixtureSource<T> {
    fn draw(&self, rng: &mut RngStream) -> (Grid<T>, Condition) {
        let (x, k) = self.mixture.draw(rng);
        let cond = if self.labelled { Condition::Class(k) } else { Condition::Unconditional };
        (x, cond)
    }
}

/// Finite set of items sampled uniformly with replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    items: Vec<(Grid<T>, Condition)>,
}

impl<T: Real> Dataset<T> {
    pub fn new(items: Vec<(Grid<T>, Condition)>) -> Self {
        Self { items }
    }

    /// `n` i.i.d. draws from `source`.
    pub fn sample_from(source: &dyn DataSource<T>, n: usize, rng: &mut RngStream) -> Self {
        Self { items: (0..n).map(|_| source.draw(rng)).collect() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[(Grid<T>, Condition)] {
        &self.items
    }

    /// Common shape of all items, if any.
    pub fn shape(&self) -> Option<&[usize]> {
        self.items.first().map(|(g, _)| g.shape())
    }

    pub fn map(&self, f: impl Fn(&Grid<T>) -> Result<Grid<T>>) -> Result<Self> {
        let items = self.items.iter().map(|(g, c)| Ok((f(g)?, *c))).collect::<Result<_>>()?;
        Ok(Self { items })
    }
}

impl<T: Real> DataSource<T> for Dataset<T> {
    /// Panics on an empty dataset; training validates this up front.
    fn draw(&self, rng: &mut RngStream) -> (Grid<T>, Condition) {
        self.items[rng.below(self.items.len())].clone()
    }
}

/// Union of the high-resolution items and upsampled low-resolution items,
/// each equally likely to be drawn.
pub fn make_structure_pool<T: Real>(high_res: &Dataset<T>, low_res: &Dataset<T>, up: &ResolutionOp) -> Result<Dataset<T>> {
    if high_res.is_empty() && low_res.is_empty() {
        return Err(param_err!("structure pool needs at least one item"));
    }
    let mut items = high_res.items.clone();
    if let Some(lo_shape) = low_res.shape() {
        let target = up.output_shape(lo_shape)?;
        if let Some(hi_shape) = high_res.shape() {
            if hi_shape != target.as_slice() {
                return Err(shape_err!(
                    "low-res {:?} upsampled by {} gives {:?}, but high-res items are {:?}",
                    lo_shape,
                    up.factor,
                    target,
                    hi_shape
                ));
            }
        }
        for (g, c) in &low_res.items {
            items.push((up.apply(g)?, *c));
        }
    }
    Ok(Dataset { items })
}
