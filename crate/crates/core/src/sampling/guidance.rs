use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::models::{Condition, Denoiser};
use crate::numerics::{Grid, Real};

/// Classifier-free guidance scale plus an optional style extrapolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub scale: f64,
    #[serde(default)]
    pub style_scale: f64,
    #[serde(default)]
    pub style: Option<usize>,
}

impl Default for GuidanceSpec {
    fn default() -> Self {
        Self { scale: 1.0, style_scale: 0.0, style: None }
    }
}

impl GuidanceSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || !self.style_scale.is_finite() {
            return Err(param_err!("guidance scales must be finite"));
        }
        if self.style_scale != 0.0 && self.style.is_none() {
            return Err(param_err!("style_scale = {} needs a style label", self.style_scale));
        }
        Ok(())
    }

    /// Only the conditional prediction is needed.
    pub fn is_plain(&self) -> bool {
        self.scale == 1.0 && self.style_scale == 0.0
    }
}

/// `e_u + s (e_c - e_u) + s_style (e_style - e_c)`, evaluated as the affine
/// combination `(1 - s) e_u + (s - s_style) e_c + s_style e_style` so that
/// unit weights reproduce an input bit for bit.
pub fn guided_eps<T: Real>(
    eps_uncond: &Grid<T>,
    eps_cond: &Grid<T>,
    eps_style: Option<&Grid<T>>,
    g: &GuidanceSpec,
) -> Result<Grid<T>> {
    eps_uncond.same_shape(eps_cond)?;
    let s = T::of(g.scale);
    let ss = T::of(g.style_scale);
    let base = eps_uncond.lincomb(T::one() - s, eps_cond, s - ss)?;
    let out = match eps_style {
        Some(e) => base.lincomb(T::one(), e, ss)?,
        None if g.style_scale != 0.0 => {
            return Err(param_err!("style_scale = {} but no style prediction given", g.style_scale))
        }
        None => base,
    };
    out.ensure_finite("guided eps")
}

/// Queries `model` as `g` requires and combines the predictions.
pub fn guided_prediction<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    z: &Grid<T>,
    t: usize,
    cond: &Condition,
    g: &GuidanceSpec,
) -> Result<Grid<T>> {
    if g.is_plain() {
        return model.predict_eps(z, t, cond);
    }
    g.validate()?;
    let e_c = model.predict_eps(z, t, cond)?;
    let e_u = if g.scale == 1.0 && g.style_scale == 1.0 {
        // zero weight; reuse e_c to skip a query
        e_c.clone()
    } else {
        model.predict_eps(z, t, &Condition::Unconditional)?
    };
    let e_s = match (g.style, g.style_scale != 0.0) {
        (Some(s), true) => Some(model.predict_eps(z, t, &Condition::Style(s))?),
        _ => None,
    };
    guided_eps(&e_u, &e_c, e_s.as_ref(), g)
}
