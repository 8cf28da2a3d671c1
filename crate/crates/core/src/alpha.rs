//! Brinkman interpolation functions `alpha_eps : [-1, 1] -> [0, alpha_bar]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the eps-dependent interpolation family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSchedule {
    /// Base coefficient `a0 > 0`.
    pub a0: f64,
    /// Exponent in `alpha_bar = a0 * eps^(-s)`.
    pub s: f64,
    /// Offset in the rational profile `a0 (1 - phi) / (1 + phi + delta)`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Half width of the C2 blend around the cap.
    #[serde(default = "default_width")]
    pub width: f64,
}

fn default_delta() -> f64 {
    0.01
}

fn default_width() -> f64 {
    0.1
}

impl AlphaSchedule {
    pub fn new(a0: f64, s: f64) -> Result<Self> {
        let a = Self {
            a0,
            s,
            delta: default_delta(),
            width: default_width(),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a0 > 0.0 && self.a0.is_finite()) {
            return Err(Error::InvalidArgument(format!("a0 = {} must be positive", self.a0)));
        }
        if !(self.s > 0.0 && self.s < 2.0 / 3.0) {
            return Err(Error::InvalidArgument(format!(
                "exponent s = {} violates growth condition o(eps^(-2/3))",
                self.s
            )));
        }
        if !(self.delta > 0.0) || !(self.width > 0.0 && self.width < 0.5) {
            return Err(Error::InvalidArgument("delta > 0 and width in (0, 0.5) required".into()));
        }
        Ok(())
    }

    pub fn alpha_bar(&self, eps: f64) -> f64 {
        self.a0 * eps.powf(-self.s)
    }

    /// Interpolation function for a given `eps`.
    pub fn at(&self, eps: f64) -> Result<Alpha> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
        }
        let a = Alpha::SmoothCap {
            a0: self.a0,
            alpha_bar: self.alpha_bar(eps),
            delta: self.delta,
            width: self.width,
        };
        a.validate()?;
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Zero,
    /// `alpha_bar (1 - phi) / 2`.
    Linear { alpha_bar: f64 },
    /// `alpha_bar * h(a0 (1 - phi) / ((1 + phi + delta) alpha_bar))` with `h`
    /// a C2 concave smoothing of `min(r, 1)`.
    SmoothCap {
        a0: f64,
        alpha_bar: f64,
        delta: f64,
        width: f64,
    },
}

impl Alpha {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Alpha::Zero => Ok(()),
            Alpha::Linear { alpha_bar } if alpha_bar >= 0.0 => Ok(()),
            Alpha::Linear { alpha_bar } => Err(Error::InvalidArgument(format!("alpha_bar = {alpha_bar} < 0"))),
            Alpha::SmoothCap {
                a0,
                alpha_bar,
                delta,
                width,
            } => {
                // the cap must be reached at phi = -1 so that alpha(-1) = alpha_bar
                let top = 2.0 * a0 / delta;
                if top < (1.0 + width) * alpha_bar {
                    Err(Error::InvalidArgument(format!(
                        "alpha_bar = {alpha_bar:.4e} exceeds the reachable cap {:.4e}",
                        top / (1.0 + width)
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn alpha_bar(&self) -> f64 {
        match *self {
            Alpha::Zero => 0.0,
            Alpha::Linear { alpha_bar } | Alpha::SmoothCap { alpha_bar, .. } => alpha_bar,
        }
    }

    pub fn value(&self, phi: f64) -> f64 {
        match *self {
            Alpha::Zero => 0.0,
            Alpha::Linear { alpha_bar } => 0.5 * alpha_bar * (1.0 - phi),
            Alpha::SmoothCap {
                a0,
                alpha_bar,
                delta,
                width,
            } => {
                let r = a0 * (1.0 - phi) / ((1.0 + phi + delta) * alpha_bar);
                alpha_bar * blend(r, width).0
            }
        }
    }

    /// `d alpha / d phi`.
    pub fn derivative(&self, phi: f64) -> f64 {
        match *self {
            Alpha::Zero => 0.0,
            Alpha::Linear { alpha_bar } => -0.5 * alpha_bar,
            Alpha::SmoothCap {
                a0,
                alpha_bar,
                delta,
                width,
            } => {
                let d = 1.0 + phi + delta;
                let r = a0 * (1.0 - phi) / (d * alpha_bar);
                let dhat = -a0 * (2.0 + delta) / (d * d);
                blend(r, width).1 * dhat
            }
        }
    }
}

/// Smooth `min(r, 1)`: identity below `1 - w`, one above `1 + w`, and a
/// quartic in between that matches value, slope and curvature at both ends.
/// Returns `(h, h')`.
fn blend(r: f64, w: f64) -> (f64, f64) {
    if r <= 1.0 - w {
        (r, 1.0)
    } else if r >= 1.0 + w {
        (1.0, 0.0)
    } else {
        let t = (r - (1.0 - w)) / (2.0 * w);
        let h = (1.0 - w) + 2.0 * w * (t - t * t * t + 0.5 * t * t * t * t);
        let dh = 1.0 - 3.0 * t * t + 2.0 * t * t * t;
        (h, dh)
    }
}
