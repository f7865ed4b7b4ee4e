//! Tamed coefficient transforms and the smooth cutoff.
//!
//! Two taming maps are provided:
//!
//! * sigmoidal: `b / (1 + h^a |b|)` and `sigma / (1 + h^a ||sigma||^2)`;
//! * balanced: both coefficients divided by the shared denominator
//!   `1 + h^a |b| + h^{a/2} ||sigma||`.
//!
//! The truncated drift multiplies the balanced drift by a cutoff
//! `zeta_R(x, y) = phi(|x|) phi(|y|)`, where `phi` is a quintic smoothstep
//! that falls from 1 at radius `R` to 0 at radius `R + 1`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, norm, scratch};
use crate::model::Coefficients;

/// Returned by the pure taming maps on non-finite input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFinite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TamingMode {
    Sigmoidal,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TamingConfig {
    pub alpha: f64,
    pub k5: f64,
    pub mode: TamingMode,
}

impl Default for TamingConfig {
    fn default() -> Self {
        TamingConfig {
            alpha: 0.5,
            k5: 1.0,
            mode: TamingMode::Sigmoidal,
        }
    }
}

impl TamingConfig {
    pub fn new(mode: TamingMode, alpha: f64) -> Result<Self> {
        let cfg = TamingConfig { alpha, k5: 1.0, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::ParameterOutOfRange(format!(
                "taming exponent alpha must lie in (0, 1/2], got {}",
                self.alpha
            )));
        }
        if !(self.k5 >= 1.0) {
            return Err(Error::ParameterOutOfRange(format!("K5 must be at least 1, got {}", self.k5)));
        }
        Ok(())
    }
}

/// Lipschitz constant of the quintic smoothstep, `max |phi'| = 15/8`.
pub const SMOOTHSTEP_LIPSCHITZ: f64 = 15.0 / 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffConfig {
    /// Inner radius `R`; the cutoff is identically one on the `R`-box.
    pub radius: f64,
    /// Lipschitz constant of `zeta_R` with respect to `|x - x'| + |y - y'|`.
    pub c_zeta: f64,
}

impl CutoffConfig {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!("cutoff radius must be positive, got {radius}")));
        }
        Ok(CutoffConfig {
            radius,
            c_zeta: SMOOTHSTEP_LIPSCHITZ,
        })
    }

    /// `R + 1`, the radius outside which the cutoff vanishes.
    pub fn outer_radius(&self) -> f64 {
        self.radius + 1.0
    }
}

pub fn tame_drift_sigmoidal(b: &mut [f64], delta: f64, alpha: f64) -> Result<(), NonFinite> {
    if !all_finite(b) {
        return Err(NonFinite);
    }
    let scale = 1.0 / (1.0 + delta.powf(alpha) * norm(b));
    b.iter_mut().for_each(|v| *v *= scale);
    Ok(())
}

pub fn tame_diffusion_sigmoidal(sigma: &mut [f64], delta: f64, alpha: f64) -> Result<(), NonFinite> {
    if !all_finite(sigma) {
        return Err(NonFinite);
    }
    let nsq: f64 = sigma.iter().map(|v| v * v).sum();
    let scale = 1.0 / (1.0 + delta.powf(alpha) * nsq);
    sigma.iter_mut().for_each(|v| *v *= scale);
    Ok(())
}

pub fn tame_balanced(b: &mut [f64], sigma: &mut [f64], delta: f64, alpha: f64) -> Result<(), NonFinite> {
    if !all_finite(b) || !all_finite(sigma) {
        return Err(NonFinite);
    }
    let gamma = 1.0 + delta.powf(alpha) * norm(b) + delta.powf(alpha / 2.0) * norm(sigma);
    let scale = 1.0 / gamma;
    b.iter_mut().for_each(|v| *v *= scale);
    sigma.iter_mut().for_each(|v| *v *= scale);
    Ok(())
}

/// Quintic smoothstep profile in the radius: 1 up to `radius`, 0 from `radius + 1`.
pub fn smoothstep_profile(r: f64, radius: f64) -> f64 {
    let u = r - radius;
    if u <= 0.0 {
        1.0
    } else if u >= 1.0 {
        0.0
    } else {
        1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    }
}

pub fn cutoff(x: &[f64], y: &[f64], cfg: &CutoffConfig) -> f64 {
    smoothstep_profile(norm(x), cfg.radius) * smoothstep_profile(norm(y), cfg.radius)
}

/// Raw coefficients paired with a step size and taming rule.
#[derive(Clone)]
pub struct TamedCoefficients {
    coefficients: Arc<dyn Coefficients>,
    delta: f64,
    taming: Option<TamingConfig>,
    cutoff: Option<CutoffConfig>,
}

impl std::fmt::Debug for TamedCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TamedCoefficients")
            .field("delta", &self.delta)
            .field("taming", &self.taming)
            .field("cutoff", &self.cutoff)
            .finish_non_exhaustive()
    }
}

impl TamedCoefficients {
    pub fn new(
        coefficients: Arc<dyn Coefficients>,
        delta: f64,
        taming: TamingConfig,
        cutoff: Option<CutoffConfig>,
    ) -> Result<Self> {
        taming.validate()?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::ParameterOutOfRange(format!("step must lie in (0, 1), got {delta}")));
        }
        if cutoff.is_some() && taming.mode != TamingMode::Balanced {
            return Err(Error::ParameterOutOfRange(
                "the truncated drift is defined for balanced taming only".into(),
            ));
        }
        Ok(TamedCoefficients {
            coefficients,
            delta,
            taming: Some(taming),
            cutoff,
        })
    }

    /// Raw `b` and `sigma` with no taming, for divergence comparisons.
    pub fn untamed(coefficients: Arc<dyn Coefficients>, delta: f64) -> Self {
        TamedCoefficients {
            coefficients,
            delta,
            taming: None,
            cutoff: None,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.coefficients.state_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.coefficients.noise_dim()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn taming(&self) -> Option<&TamingConfig> {
        self.taming.as_ref()
    }

    pub fn cutoff_config(&self) -> Option<&CutoffConfig> {
        self.cutoff.as_ref()
    }

    pub fn coefficients(&self) -> &Arc<dyn Coefficients> {
        &self.coefficients
    }

    pub fn neutral(&self, y: &[f64], out: &mut [f64]) {
        self.coefficients.neutral(y, out)
    }

    fn invalid(coefficient: &'static str, x: &[f64], y: &[f64]) -> Error {
        Error::InvalidCoefficient {
            coefficient,
            x: x.to_vec(),
            y: y.to_vec(),
        }
    }

    /// Tamed drift (times the cutoff when one is configured).
    pub fn drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        self.coefficients.drift(x, y, out);
        match self.taming {
            None => {
                if !all_finite(out) {
                    return Err(Self::invalid("drift", x, y));
                }
            }
            Some(TamingConfig {
                mode: TamingMode::Sigmoidal,
                alpha,
                ..
            }) => {
                tame_drift_sigmoidal(out, self.delta, alpha).map_err(|_| Self::invalid("drift", x, y))?;
            }
            Some(TamingConfig {
                mode: TamingMode::Balanced,
                alpha,
                ..
            }) => {
                let mut sigma = scratch(self.state_dim() * self.noise_dim());
                self.coefficients.diffusion(x, y, &mut sigma);
                tame_balanced(out, &mut sigma, self.delta, alpha).map_err(|_| Self::invalid("drift", x, y))?;
                if let Some(cut) = &self.cutoff {
                    let z = cutoff(x, y, cut);
                    out.iter_mut().for_each(|v| *v *= z);
                }
            }
        }
        self.debug_check_drift_bound(x, y, out);
        Ok(())
    }

    pub fn diffusion(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        self.coefficients.diffusion(x, y, out);
        match self.taming {
            None => {
                if !all_finite(out) {
                    return Err(Self::invalid("diffusion", x, y));
                }
            }
            Some(TamingConfig {
                mode: TamingMode::Sigmoidal,
                alpha,
                ..
            }) => {
                tame_diffusion_sigmoidal(out, self.delta, alpha).map_err(|_| Self::invalid("diffusion", x, y))?;
            }
            Some(TamingConfig {
                mode: TamingMode::Balanced,
                alpha,
                ..
            }) => {
                let mut b = scratch(self.state_dim());
                self.coefficients.drift(x, y, &mut b);
                tame_balanced(&mut b, out, self.delta, alpha).map_err(|_| Self::invalid("diffusion", x, y))?;
            }
        }
        Ok(())
    }

    /// Drift and diffusion at one point, sharing the raw evaluations.
    pub fn drift_and_diffusion(&self, x: &[f64], y: &[f64], b: &mut [f64], sigma: &mut [f64]) -> Result<()> {
        match self.taming {
            Some(TamingConfig {
                mode: TamingMode::Balanced,
                alpha,
                ..
            }) => {
                self.coefficients.drift(x, y, b);
                self.coefficients.diffusion(x, y, sigma);
                tame_balanced(b, sigma, self.delta, alpha).map_err(|_| Self::invalid("drift", x, y))?;
                if let Some(cut) = &self.cutoff {
                    let z = cutoff(x, y, cut);
                    b.iter_mut().for_each(|v| *v *= z);
                }
                self.debug_check_drift_bound(x, y, b);
                Ok(())
            }
            _ => {
                self.drift(x, y, b)?;
                self.diffusion(x, y, sigma)
            }
        }
    }

    #[inline]
    fn debug_check_drift_bound(&self, x: &[f64], y: &[f64], b: &[f64]) {
        if cfg!(debug_assertions) {
            if let Some(t) = &self.taming {
                let bound = t.k5 * self.delta.powf(-t.alpha) * (1.0 + norm(x) + norm(y));
                debug_assert!(
                    norm(b) <= bound * (1.0 + 1e-12),
                    "tamed drift bound violated at x = {x:?}, y = {y:?}: |b| = {} > {bound}",
                    norm(b)
                );
            }
        }
    }
}

/// Truncated drift `b_bar_delta(x, y) * zeta_R(x, y)` for balanced taming.
pub fn truncated_drift(
    coefficients: &dyn Coefficients,
    x: &[f64],
    y: &[f64],
    delta: f64,
    cfg: &TamingConfig,
    cut: &CutoffConfig,
    out: &mut [f64],
) -> Result<()> {
    if cfg.mode != TamingMode::Balanced {
        return Err(Error::ParameterOutOfRange(
            "the truncated drift is defined for balanced taming only".into(),
        ));
    }
    coefficients.drift(x, y, out);
    let mut sigma = scratch(coefficients.state_dim() * coefficients.noise_dim());
    coefficients.diffusion(x, y, &mut sigma);
    tame_balanced(out, &mut sigma, delta, cfg.alpha).map_err(|_| Error::InvalidCoefficient {
        coefficient: "drift",
        x: x.to_vec(),
        y: y.to_vec(),
    })?;
    let z = cutoff(x, y, cut);
    out.iter_mut().for_each(|v| *v *= z);
    Ok(())
}
