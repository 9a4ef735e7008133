use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::models::GaussianMixture;
use crate::numerics::{Grid, NoiseSchedule, Real};

/// Conditioning tag: the toy stand-in for a text prompt or style prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "label", rename_all = "snake_case")]
pub enum Condition {
    #[default]
    Unconditional,
    Class(usize),
    Style(usize),
}

/// Sizes of the configured label sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelSet {
    pub classes: usize,
    pub styles: usize,
}

impl LabelSet {
    pub fn check(&self, cond: &Condition) -> Result<()> {
        match *cond {
            Condition::Unconditional => Ok(()),
            Condition::Class(k) if k < self.classes => Ok(()),
            Condition::Style(s) if s < self.styles => Ok(()),
            c => Err(param_err!("condition {c:?} outside label set {self:?}")),
        }
    }

    /// Width of the one-hot encoding (slot 0 is unconditional).
    pub fn one_hot_len(&self) -> usize {
        1 + self.classes + self.styles
    }

    pub fn one_hot_index(&self, cond: &Condition) -> usize {
        match *cond {
            Condition::Unconditional => 0,
            Condition::Class(k) => 1 + k,
            Condition::Style(s) => 1 + self.classes + s,
        }
    }
}

/// Anything that predicts the noise in `z` at timestep `t`.
pub trait Denoiser<T: Real>: Send + Sync {
    fn predict_eps(&self, z: &Grid<T>, t: usize, cond: &Condition) -> Result<Grid<T>>;
}

impl<T: Real, D: Denoiser<T> + ?Sized> Denoiser<T> for &D {
    fn predict_eps(&self, z: &Grid<T>, t: usize, cond: &Condition) -> Result<Grid<T>> {
        (**self).predict_eps(z, t, cond)
    }
}

impl<T: Real, D: Denoiser<T> + ?Sized> Denoiser<T> for Box<D> {
    fn predict_eps(&self, z: &Grid<T>, t: usize, cond: &Condition) -> Result<Grid<T>> {
        (**self).predict_eps(z, t, cond)
    }
}

impl<T: Real, D: Denoiser<T> + ?Sized> Denoiser<T> for std::sync::Arc<D> {
    fn predict_eps(&self, z: &Grid<T>, t: usize, cond: &Condition) -> Result<Grid<T>> {
        (**self).predict_eps(z, t, cond)
    }
}

/// Analytic denoiser: the exact minimizer of the noise-regression objective
/// for mixture-distributed data.
///
/// The unconditional query uses the full mixture; class and style queries
/// use their own mixtures when configured.
#[derive(Debug, Clone)]
pub struct GmDenoiser<T = f64> {
    schedule: NoiseSchedule<T>,
    unconditional: GaussianMixture<T>,
    classes: Vec<GaussianMixture<T>>,
    styles: Vec<GaussianMixture<T>>,
}

impl<T: Real> GmDenoiser<T> {
    pub fn new(gm: GaussianMixture<T>, schedule: NoiseSchedule<T>) -> Self {
        Self { schedule, unconditional: gm, classes: Vec::new(), styles: Vec::new() }
    }

    /// Class `k` selects mixture component `k`.
    pub fn class_conditional(gm: GaussianMixture<T>, schedule: NoiseSchedule<T>) -> Result<Self> {
        let classes = (0..gm.num_components()).map(|k| gm.component(k)).collect::<Result<_>>()?;
        Ok(Self { schedule, unconditional: gm, classes, styles: Vec::new() })
    }

    pub fn with_styles(mut self, styles: Vec<GaussianMixture<T>>) -> Self {
        self.styles = styles;
        self
    }

    pub fn mixture(&self) -> &GaussianMixture<T> {
        &self.unconditional
    }

    pub fn schedule(&self) -> &NoiseSchedule<T> {
        &self.schedule
    }

    pub fn labels(&self) -> LabelSet {
        LabelSet { classes: self.classes.len(), styles: self.styles.len() }
    }

    fn select(&self, cond: &Condition) -> Result<&GaussianMixture<T>> {
        self.labels().check(cond)?;
        Ok(match *cond {
            Condition::Unconditional => &self.unconditional,
            Condition::Class(k) => &self.classes[k],
            Condition::Style(s) => &self.styles[s],
        })
    }
}

impl<T: Real> Denoiser<T> for GmDenoiser<T> {
    fn predict_eps(&self, z: &Grid<T>, t: usize, cond: &Condition) -> Result<Grid<T>> {
        crate::models::gm_predict_eps(self.select(cond)?, z, t, &self.schedule)
    }
}
