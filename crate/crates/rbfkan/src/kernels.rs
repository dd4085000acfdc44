//! Radial basis kernels and their analytic derivatives.
//!
//! Every kernel is a function of the ratio `t = r / h`, where `r >= 0` is a
//! distance and `h > 0` the shape parameter. The profile `g(t)` and its
//! derivative `g'(t)` are implemented once per kernel; the partials follow as
//!
//! ```text
//! dphi/dr =  g'(t) / h
//! dphi/dh = -t * g'(t) / h
//! ```
//!
//! which also makes the scale covariance `phi(s*r; s*h) = phi(r; h)`
//! structural rather than accidental.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eight radial kernels supported by the models in this crate.
///
/// `Ga`/`Imq` are infinitely smooth global kernels, `M2`/`M4`/`M6` are
/// Matern kernels of increasing smoothness, and `W2`/`W4`/`W6` are
/// compactly supported Wendland kernels that vanish identically for
/// `r >= h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum KernelKind {
    Ga,
    Imq,
    M6,
    M4,
    M2,
    W6,
    W4,
    W2,
}

impl KernelKind {
    pub const ALL: [KernelKind; 8] = [
        KernelKind::Ga,
        KernelKind::Imq,
        KernelKind::M6,
        KernelKind::M4,
        KernelKind::M2,
        KernelKind::W6,
        KernelKind::W4,
        KernelKind::W2,
    ];

    /// Canonical short name used in config files and reports.
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Ga => "GA",
            KernelKind::Imq => "IMQ",
            KernelKind::M6 => "M6",
            KernelKind::M4 => "M4",
            KernelKind::M2 => "M2",
            KernelKind::W6 => "W6",
            KernelKind::W4 => "W4",
            KernelKind::W2 => "W2",
        }
    }

    /// True for the Wendland family, which is exactly zero for `r >= h`.
    pub fn compact_support(self) -> bool {
        matches!(self, KernelKind::W6 | KernelKind::W4 | KernelKind::W2)
    }

    /// Kernel profile `g(t)` with `t = r / h >= 0`.
    #[inline]
    pub(crate) fn profile(self, t: f64) -> f64 {
        match self {
            KernelKind::Ga => (-0.5 * t * t).exp(),
            KernelKind::Imq => 1.0 / (1.0 + t * t).sqrt(),
            KernelKind::M6 => {
                let e = (-t).exp();
                if e == 0.0 {
                    return 0.0;
                }
                e * (((t + 6.0) * t + 15.0) * t + 15.0)
            }
            KernelKind::M4 => {
                let e = (-t).exp();
                if e == 0.0 {
                    return 0.0;
                }
                e * ((t + 3.0) * t + 3.0)
            }
            KernelKind::M2 => {
                let e = (-t).exp();
                if e == 0.0 {
                    return 0.0;
                }
                e * (t + 1.0)
            }
            KernelKind::W6 => {
                if t >= 1.0 {
                    return 0.0;
                }
                let u = 1.0 - t;
                u.powi(8) * (((32.0 * t + 25.0) * t + 8.0) * t + 1.0)
            }
            KernelKind::W4 => {
                if t >= 1.0 {
                    return 0.0;
                }
                let u = 1.0 - t;
                u.powi(6) * ((35.0 * t + 18.0) * t + 3.0)
            }
            KernelKind::W2 => {
                if t >= 1.0 {
                    return 0.0;
                }
                let u = 1.0 - t;
                u.powi(4) * (4.0 * t + 1.0)
            }
        }
    }

    /// Profile derivative `g'(t)`.
    ///
    /// All eight kernels are at least C^2, so `g'(0) = 0` and the radial
    /// derivative at the center is the analytic limit rather than a
    /// one-sided difference.
    #[inline]
    pub(crate) fn profile_deriv(self, t: f64) -> f64 {
        match self {
            KernelKind::Ga => -t * (-0.5 * t * t).exp(),
            KernelKind::Imq => {
                let s = 1.0 + t * t;
                -t / (s * s.sqrt())
            }
            KernelKind::M6 => {
                let e = (-t).exp();
                if e == 0.0 {
                    return 0.0;
                }
                -t * ((t + 3.0) * t + 3.0) * e
            }
            KernelKind::M4 => {
                let e = (-t).exp();
                if e == 0.0 {
                    return 0.0;
                }
                -t * (t + 1.0) * e
            }
            KernelKind::M2 => {
                let e = (-t).exp();
                if e == 0.0 {
                    return 0.0;
                }
                -t * e
            }
            KernelKind::W6 => {
                if t >= 1.0 {
                    return 0.0;
                }
                let u = 1.0 - t;
                -22.0 * t * u.powi(7) * ((16.0 * t + 7.0) * t + 1.0)
            }
            KernelKind::W4 => {
                if t >= 1.0 {
                    return 0.0;
                }
                let u = 1.0 - t;
                -56.0 * t * u.powi(5) * (5.0 * t + 1.0)
            }
            KernelKind::W2 => {
                if t >= 1.0 {
                    return 0.0;
                }
                let u = 1.0 - t;
                -20.0 * t * u.powi(3)
            }
        }
    }

    /// Evaluate `phi(r; h)`.
    ///
    /// `r` must be a finite non-negative distance and `h` a finite positive
    /// shape parameter; anything else is a caller bug and reported as a
    /// domain error rather than clamped.
    pub fn eval(self, r: f64, h: f64) -> Result<f64> {
        check_args(r, h)?;
        Ok(self.profile(r / h))
    }

    /// Evaluate `dphi/dr (r; h)`.
    pub fn eval_dr(self, r: f64, h: f64) -> Result<f64> {
        check_args(r, h)?;
        Ok(self.profile_deriv(r / h) / h)
    }

    /// Evaluate `dphi/dh (r; h)`.
    pub fn eval_dh(self, r: f64, h: f64) -> Result<f64> {
        check_args(r, h)?;
        let t = r / h;
        Ok(-t * self.profile_deriv(t) / h)
    }
}

fn check_args(r: f64, h: f64) -> Result<()> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::domain(format!(
            "kernel distance must be finite and non-negative, got {r}"
        )));
    }
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::domain(format!(
            "kernel shape parameter must be finite and positive, got {h}"
        )));
    }
    Ok(())
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = KernelKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!(
                    "unknown kernel {s:?}; valid choices: {}",
                    valid.join(", ")
                ))
            })
    }
}
