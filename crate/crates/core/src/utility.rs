//! Utility families with closed-form conjugates.
//!
//! | family | `U(x)` | `V(y)` | `I(y)` |
//! |---|---|---|---|
//! | log | `ln x` | `-ln y - 1` | `1/y` |
//! | power | `x^α/α` | `((1-α)/α) y^{α/(α-1)}` | `y^{1/(α-1)}` |
//! | exponential | `-exp(-γx)` | `(y/γ)(ln(y/γ) - 1)` | `-ln(y/γ)/γ` |
//!
//! `V(y) = sup_x {U(x) - xy}` and `I = (U')^{-1} = -V'`. The log and power
//! families live on `(0, ∞)` and evaluate to `-∞` elsewhere.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Log,
    Power { alpha: f64 },
    #[serde(rename = "exp")]
    Exponential { gamma: f64 },
}

/// A utility function, optionally shifted by an additive constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilitySpec {
    pub family: Family,
    /// Added to `U` (and therefore to `V`); never changes an optimizer.
    pub offset: f64,
}

impl UtilitySpec {
    pub fn log() -> Self {
        Self { family: Family::Log, offset: 0.0 }
    }

    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("power utility needs alpha in (0,1), got {alpha}")));
        }
        Ok(Self { family: Family::Power { alpha }, offset: 0.0 })
    }

    pub fn exponential(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("exponential utility needs gamma > 0, got {gamma}")));
        }
        Ok(Self { family: Family::Exponential { gamma }, offset: 0.0 })
    }

    pub fn shifted(self, offset: f64) -> Self {
        Self { offset: self.offset + offset, ..self }
    }

    /// True for families defined on `(0, ∞)` only.
    pub fn positive_domain(&self) -> bool {
        !matches!(self.family, Family::Exponential { .. })
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.family {
            Family::Exponential { gamma } => Some(gamma),
            _ => None,
        }
    }

    /// `U(x)`; `-∞` outside the domain.
    pub fn u(&self, x: f64) -> f64 {
        let raw = match self.family {
            Family::Log if x > 0.0 => x.ln(),
            Family::Power { alpha } if x > 0.0 => x.powf(alpha) / alpha,
            Family::Exponential { gamma } => -(-gamma * x).exp(),
            _ => return f64::NEG_INFINITY,
        };
        raw + self.offset
    }

    pub fn u_prime(&self, x: f64) -> f64 {
        match self.family {
            Family::Log if x > 0.0 => 1.0 / x,
            Family::Power { alpha } if x > 0.0 => x.powf(alpha - 1.0),
            Family::Exponential { gamma } => gamma * (-gamma * x).exp(),
            _ => f64::INFINITY,
        }
    }

    pub fn u_second(&self, x: f64) -> f64 {
        match self.family {
            Family::Log if x > 0.0 => -1.0 / (x * x),
            Family::Power { alpha } if x > 0.0 => (alpha - 1.0) * x.powf(alpha - 2.0),
            Family::Exponential { gamma } => -gamma * gamma * (-gamma * x).exp(),
            _ => f64::NEG_INFINITY,
        }
    }

    /// Inverse of `U` on its range.
    pub fn u_inverse(&self, value: f64) -> f64 {
        let v = value - self.offset;
        match self.family {
            Family::Log => v.exp(),
            Family::Power { alpha } => (alpha * v).powf(1.0 / alpha),
            Family::Exponential { gamma } => -(-v).ln() / gamma,
        }
    }

    /// `V(y)` for `y > 0` (unchecked).
    pub fn v(&self, y: f64) -> f64 {
        let raw = match self.family {
            Family::Log => -y.ln() - 1.0,
            Family::Power { alpha } => (1.0 - alpha) / alpha * y.powf(alpha / (alpha - 1.0)),
            Family::Exponential { gamma } => {
                if y == 0.0 {
                    0.0
                } else {
                    y / gamma * ((y / gamma).ln() - 1.0)
                }
            }
        };
        raw + self.offset
    }

    /// `V'(y) = -I(y)`.
    pub fn v_prime(&self, y: f64) -> f64 {
        -self.i(y)
    }

    /// `V''(y) = -I'(y) > 0`.
    pub fn v_second(&self, y: f64) -> f64 {
        match self.family {
            Family::Log => 1.0 / (y * y),
            Family::Power { alpha } => -(1.0 / (alpha - 1.0)) * y.powf(1.0 / (alpha - 1.0) - 1.0),
            Family::Exponential { gamma } => 1.0 / (gamma * y),
        }
    }

    /// `I(y) = (U')^{-1}(y)` (unchecked).
    pub fn i(&self, y: f64) -> f64 {
        match self.family {
            Family::Log => 1.0 / y,
            Family::Power { alpha } => y.powf(1.0 / (alpha - 1.0)),
            Family::Exponential { gamma } => -(y / gamma).ln() / gamma,
        }
    }
}

pub fn eval_u(spec: &UtilitySpec, x: f64) -> f64 {
    spec.u(x)
}

pub fn eval_v(spec: &UtilitySpec, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("V is defined for y > 0, got {y}")));
    }
    Ok(spec.v(y))
}

pub fn eval_i(spec: &UtilitySpec, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("I is defined for y > 0, got {y}")));
    }
    Ok(spec.i(y))
}

impl fmt::Display for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Log => write!(f, "log")?,
            Family::Power { alpha } => write!(f, "power:alpha={alpha}")?,
            Family::Exponential { gamma } => write!(f, "exp:gamma={gamma}")?,
        }
        if self.offset != 0.0 {
            write!(f, " (+{})", self.offset)?;
        }
        Ok(())
    }
}

impl FromStr for UtilitySpec {
    type Err = Error;

    /// Accepts `log`, `power:alpha=A` and `exp:gamma=G`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("unrecognized utility spec '{s}'"));
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let param = |key: &str| -> Result<f64> {
            let p = params.ok_or_else(bad)?;
            let (k, v) = p.split_once('=').ok_or_else(bad)?;
            if k.trim() != key {
                return Err(bad());
            }
            v.trim().parse::<f64>().map_err(|_| bad())
        };
        match name {
            "log" if params.is_none() => Ok(Self::log()),
            "power" => Self::power(param("alpha")?),
            "exp" => Self::exponential(param("gamma")?),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ElasticityRow {
    pub x: f64,
    pub u: f64,
    /// `x U'(x) / U(x)`; `None` where `U(x) = 0` or outside the domain.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ElasticityReport {
    pub rows: Vec<ElasticityRow>,
    /// Ratio at the largest positive probe is below 1.
    pub upper_consistent: Option<bool>,
    /// Ratio at the most negative probe is above 1 (real-line families).
    pub lower_consistent: Option<bool>,
}

/// Samples `x U'(x)/U(x)`. Advisory only: a finite sample cannot decide a limit.
pub fn elasticity_diagnostic(spec: &UtilitySpec, probe_points: &[f64]) -> ElasticityReport {
    let rows: Vec<ElasticityRow> = probe_points
        .iter()
        .map(|&x| {
            let u = spec.u(x);
            let ratio = (u.is_finite() && u != 0.0).then(|| x * spec.u_prime(x) / u);
            ElasticityRow { x, u, ratio }
        })
        .collect();
    let pick = |best: fn(f64, f64) -> bool| {
        rows.iter()
            .filter(|r| r.ratio.is_some())
            .fold(None::<&ElasticityRow>, |acc, r| match acc {
                Some(a) if !best(r.x, a.x) => Some(a),
                _ => Some(r),
            })
    };
    let upper_consistent = pick(|a, b| a > b).filter(|r| r.x > 0.0).and_then(|r| r.ratio).map(|q| q < 1.0);
    let lower_consistent = if spec.positive_domain() {
        None
    } else {
        pick(|a, b| a < b).filter(|r| r.x < 0.0).and_then(|r| r.ratio).map(|q| q > 1.0)
    };
    ElasticityReport { rows, upper_consistent, lower_consistent }
}
