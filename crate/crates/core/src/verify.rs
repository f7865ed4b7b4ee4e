//! Sampled checks of the structural assumptions and estimates of the
//! constants the step-size guards consume.
//!
//! Each check draws quadruples `(x, y, x', y')` on a box, evaluates the
//! defining inequality as a quotient, and reports the sampled maximum as the
//! constant estimate. Every other sample is a near-diagonal probe
//! `(x', y') = (x, y) + eps u` with `|u| = 1`, since one-sided Lipschitz
//! failures concentrate near the diagonal. Samples come in chunks of 1024,
//! chunk `c` drawn from stream `c` of the seed, so a larger sample set always
//! contains the smaller one.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist, dot, norm, norm_sq, scratch};
use crate::model::{AssumptionConstants, Coefficients};
use crate::paths::path_rng;
use crate::taming::{CutoffConfig, TamedCoefficients, TamingConfig, TamingMode, SMOOTHSTEP_LIPSCHITZ};

pub const CHUNK: usize = 1024;
pub const PROBE_EPS: f64 = 1e-4;
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssumptionId {
    A2,
    A3,
    #[serde(rename = "A3'")]
    A3Weak,
    A4,
    A5,
    B1,
    B2,
    #[serde(rename = "B2'")]
    B2Weak,
    B3,
    B4,
    C1,
    C2,
    C3,
    C4,
}

impl AssumptionId {
    pub const ALL: [AssumptionId; 14] = [
        AssumptionId::A2,
        AssumptionId::A3,
        AssumptionId::A3Weak,
        AssumptionId::A4,
        AssumptionId::A5,
        AssumptionId::B1,
        AssumptionId::B2,
        AssumptionId::B2Weak,
        AssumptionId::B3,
        AssumptionId::B4,
        AssumptionId::C1,
        AssumptionId::C2,
        AssumptionId::C3,
        AssumptionId::C4,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AssumptionId::A2 => "A2",
            AssumptionId::A3 => "A3",
            AssumptionId::A3Weak => "A3'",
            AssumptionId::A4 => "A4",
            AssumptionId::A5 => "A5",
            AssumptionId::B1 => "B1",
            AssumptionId::B2 => "B2",
            AssumptionId::B2Weak => "B2'",
            AssumptionId::B3 => "B3",
            AssumptionId::B4 => "B4",
            AssumptionId::C1 => "C1",
            AssumptionId::C2 => "C2",
            AssumptionId::C3 => "C3",
            AssumptionId::C4 => "C4",
        }
    }

    /// Local conditions sample on the Euclidean ball rather than the cube.
    fn is_local(&self) -> bool {
        matches!(self, AssumptionId::A5 | AssumptionId::C3 | AssumptionId::C4)
    }
}

impl fmt::Display for AssumptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    PassSampled,
    ViolatedWitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub y_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub assumption_id: AssumptionId,
    pub status: CheckStatus,
    pub estimated_constant: f64,
    /// Second constant of a two-part condition (the polynomial Lipschitz
    /// constant `K4` for A4).
    pub secondary_constant: Option<f64>,
    pub witness: Option<Witness>,
    pub samples: usize,
    pub box_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub box_radius: f64,
    pub samples: usize,
    pub p: f64,
    pub seed: u64,
    /// Step size at which tamed coefficients are evaluated.
    pub delta: f64,
    /// `alpha` and `K5`; the mode is implied by the condition family.
    pub taming: TamingConfig,
}

impl VerifyConfig {
    pub fn new(box_radius: f64, samples: usize, seed: u64) -> Self {
        VerifyConfig {
            box_radius,
            samples,
            p: 2.0,
            seed,
            delta: 1e-2,
            taming: TamingConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.box_radius > 0.0 && self.box_radius.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!("box radius must be positive, got {}", self.box_radius)));
        }
        if self.samples == 0 {
            return Err(Error::ParameterOutOfRange("verification needs at least one sample".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::ParameterOutOfRange(format!("step must lie in (0, 1), got {}", self.delta)));
        }
        self.taming.validate()
    }
}

/// Where quadruples are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Region {
    Cube(f64),
    Ball(f64),
}

#[derive(Debug, Clone, Copy, Default)]
struct Eval {
    quotient: f64,
    secondary: f64,
    /// `lhs - bound` for a declared constant; `-inf` when none applies.
    excess: f64,
}

#[derive(Debug, Clone)]
struct Extremes {
    quotient: f64,
    quotient_at: Option<Witness>,
    secondary: f64,
    excess: f64,
    excess_at: Option<Witness>,
}

impl Extremes {
    fn empty() -> Self {
        Extremes {
            quotient: f64::NEG_INFINITY,
            quotient_at: None,
            secondary: f64::NEG_INFINITY,
            excess: f64::NEG_INFINITY,
            excess_at: None,
        }
    }

    /// Keeps the earlier witness on ties so the merge order is irrelevant
    /// only through chunk order, which is fixed.
    fn absorb(&mut self, other: Extremes) {
        if other.quotient > self.quotient {
            self.quotient = other.quotient;
            self.quotient_at = other.quotient_at;
        }
        self.secondary = self.secondary.max(other.secondary);
        if other.excess > self.excess {
            self.excess = other.excess;
            self.excess_at = other.excess_at;
        }
    }
}

fn witness(x: &[f64], y: &[f64], xb: &[f64], yb: &[f64]) -> Witness {
    Witness {
        x: x.to_vec(),
        y: y.to_vec(),
        x_bar: xb.to_vec(),
        y_bar: yb.to_vec(),
    }
}

fn project(v: &mut [f64], region: Region) {
    if let Region::Ball(r) = region {
        let nv = norm(v);
        if nv > r {
            v.iter_mut().for_each(|c| *c *= r / nv);
        }
    }
}

/// Max-reduces `eval` over `samples` quadruples on `region`.
fn sample_extremes<F>(n: usize, region: Region, samples: usize, seed: u64, eval: F) -> Result<Extremes>
where
    F: Fn(&[f64], &[f64], &[f64], &[f64]) -> Result<Option<Eval>> + Sync,
{
    let radius = match region {
        Region::Cube(r) | Region::Ball(r) => r,
    };
    let n_chunks = samples.div_ceil(CHUNK);
    let chunks: Vec<Result<Extremes>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = path_rng(seed, c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut ext = Extremes::empty();
            let (mut x, mut y, mut xb, mut yb) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            let mut dir = vec![0.0; 2 * n];
            for i in 0..count {
                for v in x.iter_mut().chain(y.iter_mut()) {
                    *v = rng.random_range(-radius..=radius);
                }
                if i % 2 == 0 {
                    for v in xb.iter_mut().chain(yb.iter_mut()) {
                        *v = rng.random_range(-radius..=radius);
                    }
                } else {
                    for d in dir.iter_mut() {
                        *d = rng.sample(StandardNormal);
                    }
                    let nd = norm(&dir).max(f64::MIN_POSITIVE);
                    for j in 0..n {
                        xb[j] = x[j] + PROBE_EPS * dir[j] / nd;
                        yb[j] = y[j] + PROBE_EPS * dir[n + j] / nd;
                    }
                }
                for v in [&mut x, &mut y, &mut xb, &mut yb] {
                    project(v, region);
                }
                if let Some(e) = eval(&x, &y, &xb, &yb)? {
                    if e.quotient > ext.quotient {
                        ext.quotient = e.quotient;
                        ext.quotient_at = Some(witness(&x, &y, &xb, &yb));
                    }
                    ext.secondary = ext.secondary.max(e.secondary);
                    if e.excess > ext.excess {
                        ext.excess = e.excess;
                        ext.excess_at = Some(witness(&x, &y, &xb, &yb));
                    }
                }
            }
            Ok(ext)
        })
        .collect();
    let mut total = Extremes::empty();
    for c in chunks {
        total.absorb(c?);
    }
    Ok(total)
}

fn invalid(coefficient: &'static str, x: &[f64], y: &[f64]) -> Error {
    Error::InvalidCoefficient {
        coefficient,
        x: x.to_vec(),
        y: y.to_vec(),
    }
}

/// Raw or tamed coefficient evaluation with finiteness checks.
struct Evaluator {
    raw: Arc<dyn Coefficients>,
    tamed: Option<TamedCoefficients>,
    n: usize,
    d: usize,
}

impl Evaluator {
    fn raw(c: &Arc<dyn Coefficients>) -> Self {
        Evaluator {
            raw: c.clone(),
            tamed: None,
            n: c.state_dim(),
            d: c.noise_dim(),
        }
    }

    fn tamed(c: &Arc<dyn Coefficients>, delta: f64, taming: TamingConfig, cutoff: Option<CutoffConfig>) -> Result<Self> {
        Ok(Evaluator {
            raw: c.clone(),
            tamed: Some(TamedCoefficients::new(c.clone(), delta, taming, cutoff)?),
            n: c.state_dim(),
            d: c.noise_dim(),
        })
    }

    fn neutral(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.raw.neutral(y, out);
        if all_finite(out) {
            Ok(())
        } else {
            Err(invalid("neutral", y, y))
        }
    }

    fn drift_diffusion(&self, x: &[f64], y: &[f64], b: &mut [f64], s: &mut [f64]) -> Result<()> {
        match &self.tamed {
            Some(t) => t.drift_and_diffusion(x, y, b, s),
            None => {
                self.raw.drift(x, y, b);
                self.raw.diffusion(x, y, s);
                if !all_finite(b) {
                    return Err(invalid("drift", x, y));
                }
                if !all_finite(s) {
                    return Err(invalid("diffusion", x, y));
                }
                Ok(())
            }
        }
    }

    /// `x - D(y) - x' + D(y')`
    fn neutral_difference(&self, x: &[f64], y: &[f64], xb: &[f64], yb: &[f64], out: &mut [f64]) -> Result<()> {
        let mut dy = scratch(self.n);
        let mut dyb = scratch(self.n);
        self.neutral(y, &mut dy)?;
        self.neutral(yb, &mut dyb)?;
        for i in 0..self.n {
            out[i] = x[i] - dy[i] - xb[i] + dyb[i];
        }
        Ok(())
    }
}

fn sq_dist(x: &[f64], y: &[f64], xb: &[f64], yb: &[f64]) -> f64 {
    let dx = dist(x, xb);
    let dy = dist(y, yb);
    dx * dx + dy * dy
}

/// Growth quotient `max(<x - D(y), b>, |sigma|^2)` or its weak form
/// `2 <x - D(y), b> + (p - 1) |sigma|^2`, over `1 + |x|^2 + |y|^2`.
fn growth_quotient(ev: &Evaluator, x: &[f64], y: &[f64], weak: bool, p: f64) -> Result<f64> {
    let (mut b, mut s, mut dy) = (scratch(ev.n), scratch(ev.n * ev.d), scratch(ev.n));
    ev.drift_diffusion(x, y, &mut b, &mut s)?;
    ev.neutral(y, &mut dy)?;
    let mut inner = 0.0;
    for i in 0..ev.n {
        inner += (x[i] - dy[i]) * b[i];
    }
    let lhs = if weak {
        2.0 * inner + (p - 1.0) * norm_sq(&s)
    } else {
        inner.max(norm_sq(&s))
    };
    Ok(lhs / (1.0 + norm_sq(x) + norm_sq(y)))
}

/// `<x - D(y) - x' + D(y'), b(x, y) - b(x', y')>` and `|sigma - sigma'|^2`.
fn monotonicity_terms(ev: &Evaluator, x: &[f64], y: &[f64], xb: &[f64], yb: &[f64]) -> Result<(f64, f64, f64)> {
    let (mut b, mut s, mut bb, mut sb, mut nd) =
        (scratch(ev.n), scratch(ev.n * ev.d), scratch(ev.n), scratch(ev.n * ev.d), scratch(ev.n));
    ev.drift_diffusion(x, y, &mut b, &mut s)?;
    ev.drift_diffusion(xb, yb, &mut bb, &mut sb)?;
    ev.neutral_difference(x, y, xb, yb, &mut nd)?;
    let db: Vec<f64> = b.iter().zip(&bb).map(|(u, v)| u - v).collect();
    let ds: f64 = s.iter().zip(&sb).map(|(u, v)| (u - v) * (u - v)).sum();
    Ok((dot(&nd, &db), ds, norm(&db)))
}

/// Min-bound quotient for the tamed/raw pair: `|b~| / min(K5 h^-a (1 + |x| + |y|), |b|)`
/// and the matching diffusion ratio; `0/0` counts as `0`.
fn taming_bound_eval(raw: &Evaluator, tamed: &Evaluator, x: &[f64], y: &[f64], delta: f64, t: &TamingConfig) -> Result<Eval> {
    let (mut b, mut s, mut bt, mut st) = (scratch(raw.n), scratch(raw.n * raw.d), scratch(raw.n), scratch(raw.n * raw.d));
    raw.drift_diffusion(x, y, &mut b, &mut s)?;
    tamed.drift_diffusion(x, y, &mut bt, &mut st)?;
    let scale = t.k5 * delta.powf(-t.alpha);
    let b_bound = (scale * (1.0 + norm(x) + norm(y))).min(norm(&b));
    let s_bound = (scale * (1.0 + norm_sq(x) + norm_sq(y))).min(norm_sq(&s));
    let ratio = |lhs: f64, rhs: f64| if lhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(Eval {
        quotient: ratio(norm(&bt), b_bound).max(ratio(norm_sq(&st), s_bound)),
        secondary: f64::NEG_INFINITY,
        excess: (norm(&bt) - b_bound).max(norm_sq(&st) - s_bound),
    })
}

/// `max(|b - b~|, |sigma - sigma~|)` at one point.
fn taming_gap(raw: &Evaluator, tamed: &Evaluator, x: &[f64], y: &[f64]) -> Result<f64> {
    let (mut b, mut s, mut bt, mut st) = (scratch(raw.n), scratch(raw.n * raw.d), scratch(raw.n), scratch(raw.n * raw.d));
    raw.drift_diffusion(x, y, &mut b, &mut s)?;
    tamed.drift_diffusion(x, y, &mut bt, &mut st)?;
    Ok(dist(&b, &bt).max(dist(&s, &st)))
}

fn no_bound(q: f64) -> Option<Eval> {
    Some(Eval {
        quotient: q,
        secondary: f64::NEG_INFINITY,
        excess: f64::NEG_INFINITY,
    })
}

fn bounded(q: f64, lhs: f64, rhs: Option<f64>) -> Option<Eval> {
    Some(Eval {
        quotient: q,
        secondary: f64::NEG_INFINITY,
        excess: rhs.map_or(f64::NEG_INFINITY, |r| lhs - r),
    })
}

pub fn check_assumption(
    id: AssumptionId,
    coefficients: &Arc<dyn Coefficients>,
    constants: &AssumptionConstants,
    cfg: &VerifyConfig,
) -> Result<AssumptionReport> {
    cfg.validate()?;
    let n = coefficients.state_dim();
    let r = cfg.box_radius;
    let region = if id.is_local() { Region::Ball(r) } else { Region::Cube(r) };
    let raw = Evaluator::raw(coefficients);
    let sig = TamingConfig {
        mode: TamingMode::Sigmoidal,
        ..cfg.taming
    };
    let bal = TamingConfig {
        mode: TamingMode::Balanced,
        ..cfg.taming
    };
    let tamed = match id {
        AssumptionId::B1 | AssumptionId::B2 | AssumptionId::B2Weak | AssumptionId::B3 | AssumptionId::B4 => {
            Some(Evaluator::tamed(coefficients, cfg.delta, sig, None)?)
        }
        AssumptionId::C1 | AssumptionId::C2 | AssumptionId::C3 | AssumptionId::C4 => {
            Some(Evaluator::tamed(coefficients, cfg.delta, bal, None)?)
        }
        _ => None,
    };
    let p = cfg.p;
    let l = constants.l.unwrap_or(2.0);
    let alpha = cfg.taming.alpha;
    let delta = cfg.delta;

    let eval = |x: &[f64], y: &[f64], xb: &[f64], yb: &[f64]| -> Result<Option<Eval>> {
        let d2 = sq_dist(x, y, xb, yb);
        Ok(match id {
            AssumptionId::A2 => {
                let dx = dist(x, xb);
                if dx == 0.0 {
                    return Ok(None);
                }
                let (mut dx_img, mut dxb_img) = (scratch(n), scratch(n));
                raw.neutral(x, &mut dx_img)?;
                raw.neutral(xb, &mut dxb_img)?;
                let lhs = dist(&dx_img, &dxb_img);
                bounded(lhs / dx, lhs, Some(constants.kappa * dx))
            }
            AssumptionId::A3 | AssumptionId::A3Weak => {
                let q = growth_quotient(&raw, x, y, id == AssumptionId::A3Weak, p)?;
                let denom = 1.0 + norm_sq(x) + norm_sq(y);
                bounded(q, q * denom, constants.k2.map(|k| k * denom))
            }
            AssumptionId::A4 => {
                if d2 == 0.0 {
                    return Ok(None);
                }
                let (inner, ds, db) = monotonicity_terms(&raw, x, y, xb, yb)?;
                let lhs = 2.0 * inner + (p - 1.0) * ds;
                let weight = 1.0 + norm(x).powf(l) + norm(xb).powf(l) + norm(y).powf(l) + norm(yb).powf(l);
                let sum_dist = dist(x, xb) + dist(y, yb);
                let k4_q = db / (weight * sum_dist);
                let e1 = constants.k3.map_or(f64::NEG_INFINITY, |k| lhs - k * d2);
                let e2 = constants.k4.map_or(f64::NEG_INFINITY, |k| db - k * weight * sum_dist);
                Some(Eval {
                    quotient: lhs / d2,
                    secondary: k4_q,
                    excess: e1.max(e2),
                })
            }
            AssumptionId::A5 => {
                if d2 == 0.0 {
                    return Ok(None);
                }
                let (inner, ds, _) = monotonicity_terms(&raw, x, y, xb, yb)?;
                no_bound(inner.max(ds) / d2)
            }
            AssumptionId::B1 => Some(taming_bound_eval(&raw, tamed.as_ref().unwrap(), x, y, delta, &sig)?),
            AssumptionId::C1 => Some(taming_bound_eval(&raw, tamed.as_ref().unwrap(), x, y, delta, &bal)?),
            AssumptionId::B2 | AssumptionId::C2 => no_bound(growth_quotient(tamed.as_ref().unwrap(), x, y, false, p)?),
            AssumptionId::B2Weak => no_bound(growth_quotient(tamed.as_ref().unwrap(), x, y, true, p)?),
            AssumptionId::B3 | AssumptionId::C3 => {
                if d2 == 0.0 {
                    return Ok(None);
                }
                let (inner, _, _) = monotonicity_terms(tamed.as_ref().unwrap(), x, y, xb, yb)?;
                no_bound(inner / d2)
            }
            AssumptionId::B4 => {
                let gap = taming_gap(&raw, tamed.as_ref().unwrap(), x, y)?;
                let e = 2.0 * l + 1.0;
                no_bound(gap / (delta.powf(alpha) * (1.0 + norm(x).powf(e) + norm(y).powf(e))))
            }
            AssumptionId::C4 => {
                let gap = taming_gap(&raw, tamed.as_ref().unwrap(), x, y)?;
                no_bound(gap / delta.powf(alpha))
            }
        })
    };

    let mut ext = sample_extremes(n, region, cfg.samples, cfg.seed, eval)?;

    let mut violated = ext.excess > VIOLATION_TOL;
    let mut witness = if violated { ext.excess_at.take() } else { None };
    if id == AssumptionId::A2 {
        let d0 = {
            let mut out = vec![0.0; n];
            raw.neutral(&vec![0.0; n], &mut out)?;
            norm(&out)
        };
        if !violated && ext.quotient >= 0.5 {
            violated = true;
            witness = ext.quotient_at.take();
        }
        if !violated && d0 > VIOLATION_TOL {
            violated = true;
            let z = vec![0.0; n];
            witness = Some(Witness {
                x: z.clone(),
                y: z.clone(),
                x_bar: z.clone(),
                y_bar: z,
            });
        }
    }
    let estimated = if ext.quotient == f64::NEG_INFINITY { 0.0 } else { ext.quotient };
    Ok(AssumptionReport {
        assumption_id: id,
        status: if violated { CheckStatus::ViolatedWitness } else { CheckStatus::PassSampled },
        estimated_constant: estimated,
        secondary_constant: (id == AssumptionId::A4).then_some(ext.secondary),
        witness,
        samples: cfg.samples,
        box_radius: r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardConstantEstimates {
    /// Sampled one-sided Lipschitz constant of the tamed drift on the box.
    pub k3_tilde: f64,
    /// `sup |b|` on the `R0`-ball.
    pub l_bar: f64,
    /// One-sided Lipschitz constant of the balanced drift on the `R0`-ball.
    pub m_r: f64,
    /// Sampled global one-sided quotient of the truncated drift.
    pub m_bar_sampled: f64,
    /// `M_{R0} + 2 C_zeta L_bar_{R0}`.
    pub m_bar_formula: f64,
    /// `max(m_bar_sampled, m_bar_formula)`, used for the third guard.
    pub m_bar: f64,
    pub radius: f64,
}

/// Estimates `K3~`, `L_bar_{R0}`, `M_{R0}` and `M_bar_{R0}`.
///
/// `box_radius` is `R0`. For the truncated drift the one-sided bound of the
/// cut-off drift needs the balanced constants on the ball where the cutoff is
/// non-zero, so callers pass `R0 = R + 1` for a cutoff radius `R`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_guard_constants(
    coefficients: &Arc<dyn Coefficients>,
    taming: &TamingConfig,
    cutoff: Option<&CutoffConfig>,
    delta: f64,
    box_radius: f64,
    samples: usize,
    seed: u64,
) -> Result<GuardConstantEstimates> {
    let n = coefficients.state_dim();
    let raw = Evaluator::raw(coefficients);
    let tamed = Evaluator::tamed(coefficients, delta, *taming, None)?;
    let bal = Evaluator::tamed(
        coefficients,
        delta,
        TamingConfig {
            mode: TamingMode::Balanced,
            ..*taming
        },
        None,
    )?;

    let one_sided = |ev: &Evaluator, region: Region, seed: u64| -> Result<f64> {
        let ext = sample_extremes(n, region, samples, seed, |x, y, xb, yb| {
            let d2 = sq_dist(x, y, xb, yb);
            if d2 == 0.0 {
                return Ok(None);
            }
            let (inner, _, _) = monotonicity_terms(ev, x, y, xb, yb)?;
            Ok(no_bound(inner / d2))
        })?;
        Ok(if ext.quotient == f64::NEG_INFINITY { 0.0 } else { ext.quotient })
    };

    let k3_tilde = one_sided(&tamed, Region::Cube(box_radius), seed)?;
    let m_r = one_sided(&bal, Region::Ball(box_radius), seed ^ 0x5a5a)?;
    let sup_b = sample_extremes(n, Region::Ball(box_radius), samples, seed ^ 0xa5a5, |x, y, _, _| {
        let (mut b, mut s) = (scratch(n), scratch(n * raw.d));
        raw.drift_diffusion(x, y, &mut b, &mut s)?;
        Ok(no_bound(norm(&b)))
    })?;
    let l_bar = sup_b.quotient.max(0.0);

    let c_zeta = cutoff.map_or(SMOOTHSTEP_LIPSCHITZ, |c| c.c_zeta);
    let m_bar_formula = m_r.max(0.0) + 2.0 * c_zeta * l_bar;
    let m_bar_sampled = match cutoff {
        Some(cut) => {
            let trunc = Evaluator::tamed(
                coefficients,
                delta,
                TamingConfig {
                    mode: TamingMode::Balanced,
                    ..*taming
                },
                Some(*cut),
            )?;
            one_sided(&trunc, Region::Cube(box_radius.max(cut.outer_radius()) + 1.0), seed ^ 0x3c3c)?
        }
        None => m_r,
    };
    Ok(GuardConstantEstimates {
        k3_tilde,
        l_bar,
        m_r,
        m_bar_sampled,
        m_bar_formula,
        m_bar: m_bar_sampled.max(m_bar_formula),
        radius: box_radius,
    })
}

/// Fills the radius-indexed local constants of `constants` at `radius`.
pub fn populate_local_constants(
    coefficients: &Arc<dyn Coefficients>,
    constants: &mut AssumptionConstants,
    cfg: &VerifyConfig,
) -> Result<()> {
    let a5 = check_assumption(AssumptionId::A5, coefficients, constants, cfg)?;
    let c3 = check_assumption(AssumptionId::C3, coefficients, constants, cfg)?;
    let c4 = check_assumption(AssumptionId::C4, coefficients, constants, cfg)?;
    let est = estimate_guard_constants(coefficients, &cfg.taming, None, cfg.delta, cfg.box_radius, cfg.samples, cfg.seed)?;
    constants.insert_local(crate::model::LocalConstants {
        radius: cfg.box_radius,
        l_r: a5.estimated_constant,
        l_bar_r: est.l_bar,
        m_r: c3.estimated_constant,
        n_r: c4.estimated_constant,
    });
    Ok(())
}
