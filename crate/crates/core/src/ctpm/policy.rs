//! Continuous treatment-policy likelihoods `p(P | match)` on `[0, 1]`.
//!
//! Two families are available:
//!
//! * **sigmoid bell**: density proportional to the logistic slope
//!   `σ(u)(1 − σ(u))` with `u = k(P − s)`, truncated to `[0, 1]`. Its CDF on
//!   the real line is `σ(k(P − s))`, so the truncated density is
//!   `k σ'(u) / (σ(k(1 − s)) − σ(−k s))`. The location `s` is the peak.
//! * **beta**: the standard `Beta(α, β)` density. With both parameters above
//!   one it is unimodal with mode `(α − 1)/(α + β − 2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, sigmoid};

/// Intensities are kept this far from the interval ends when the beta
/// likelihood enters a batch weight, so weights stay strictly positive and
/// log-derivatives stay finite.
pub const BETA_INTENSITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyFamily {
    SigmoidBell {
        /// Bell sharpness `k`; 1 reproduces the plain `P − s` offset.
        #[serde(default = "default_sharpness")]
        sharpness: f64,
    },
    Beta,
}

fn default_sharpness() -> f64 {
    1.0
}

impl Default for PolicyFamily {
    fn default() -> Self {
        PolicyFamily::SigmoidBell { sharpness: 1.0 }
    }
}

impl PolicyFamily {
    /// Number of policy-network outputs.
    pub fn arity(self) -> usize {
        match self {
            PolicyFamily::SigmoidBell { .. } => 1,
            PolicyFamily::Beta => 2,
        }
    }

    /// Interprets raw (post-activation) policy-network outputs.
    pub fn params_from_outputs(self, outputs: &[f64]) -> PolicyParams {
        match self {
            PolicyFamily::SigmoidBell { sharpness } => PolicyParams::SigmoidBell {
                location: outputs[0],
                sharpness,
            },
            PolicyFamily::Beta => PolicyParams::Beta {
                alpha: outputs[0],
                beta: outputs[1],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyParams {
    SigmoidBell { location: f64, sharpness: f64 },
    Beta { alpha: f64, beta: f64 },
}

fn check_intensity(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "intensity {p} outside [0, 1]"
        )));
    }
    Ok(())
}

/// `c · ln v` with the convention `0 · ln 0 = 0`.
fn scaled_ln(c: f64, v: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * v.ln()
    }
}

impl PolicyParams {
    /// Bell value before truncation: `σ(u)(1 − σ(u))`, `u = k(P − s)`.
    pub fn unnormalized_bell(location: f64, sharpness: f64, intensity: f64) -> f64 {
        let s = sigmoid(sharpness * (intensity - location));
        s * (1.0 - s)
    }

    fn bell_mass(location: f64, sharpness: f64) -> f64 {
        sigmoid(sharpness * (1.0 - location)) - sigmoid(-sharpness * location)
    }

    /// Log density, assuming `intensity ∈ [0, 1]`.
    pub fn ln_density_unchecked(&self, intensity: f64) -> f64 {
        match *self {
            PolicyParams::SigmoidBell {
                location,
                sharpness,
            } => {
                let u = sharpness * (intensity - location);
                sharpness.ln() + math::ln_sigmoid(u) + math::ln_sigmoid(-u)
                    - Self::bell_mass(location, sharpness).ln()
            }
            PolicyParams::Beta { alpha, beta } => {
                scaled_ln(alpha - 1.0, intensity) + scaled_ln(beta - 1.0, 1.0 - intensity)
                    - math::ln_beta(alpha, beta)
            }
        }
    }

    /// Density on `[0, 1]`.
    pub fn density(&self, intensity: f64) -> Result<f64> {
        check_intensity(intensity)?;
        Ok(self.ln_density_unchecked(intensity).exp())
    }

    /// Likelihood used inside batch weights and scores: the density, with
    /// beta intensities pulled [`BETA_INTENSITY_MARGIN`] away from 0 and 1.
    pub fn likelihood(&self, intensity: f64) -> f64 {
        self.ln_density_unchecked(self.effective_intensity(intensity))
            .exp()
    }

    fn effective_intensity(&self, intensity: f64) -> f64 {
        match self {
            PolicyParams::SigmoidBell { .. } => intensity.clamp(0.0, 1.0),
            PolicyParams::Beta { .. } => {
                intensity.clamp(BETA_INTENSITY_MARGIN, 1.0 - BETA_INTENSITY_MARGIN)
            }
        }
    }

    /// Gradient of `ln likelihood` with respect to the distribution
    /// parameters (`[∂/∂s]` or `[∂/∂α, ∂/∂β]`).
    pub fn ln_likelihood_gradient(&self, intensity: f64) -> [f64; 2] {
        let p = self.effective_intensity(intensity);
        match *self {
            PolicyParams::SigmoidBell {
                location: s,
                sharpness: k,
            } => {
                let u = k * (p - s);
                let slope = |z: f64| {
                    let q = sigmoid(z);
                    q * (1.0 - q)
                };
                let d_shape = -k * (1.0 - 2.0 * sigmoid(u));
                let d_mass = k * (slope(k * (1.0 - s)) - slope(-k * s)) / Self::bell_mass(s, k);
                [d_shape + d_mass, 0.0]
            }
            PolicyParams::Beta { alpha, beta } => {
                let common = math::digamma(alpha + beta);
                [
                    p.ln() - math::digamma(alpha) + common,
                    (1.0 - p).ln() - math::digamma(beta) + common,
                ]
            }
        }
    }

    /// Intensity of maximum density.
    pub fn mode(&self) -> f64 {
        match *self {
            PolicyParams::SigmoidBell { location, .. } => location.clamp(0.0, 1.0),
            PolicyParams::Beta { alpha, beta } => {
                if alpha > 1.0 && beta > 1.0 {
                    (alpha - 1.0) / (alpha + beta - 2.0)
                } else if alpha > 1.0 {
                    1.0
                } else if beta > 1.0 {
                    0.0
                } else {
                    // flat or U-shaped; no interior maximum
                    0.5
                }
            }
        }
    }
}

/// Density of `family` with `params` at `intensity`.
pub fn policy_density(params: &PolicyParams, intensity: f64) -> Result<f64> {
    params.density(intensity)
}
