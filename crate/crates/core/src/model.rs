//! Problem data for neutral stochastic delay equations
//!
//! ```text
//! d[X(t) - D(X(t - tau))] = b(X(t), X(t - tau)) dt + sigma(X(t), X(t - tau)) dW(t)
//! ```
//!
//! with a deterministic initial segment `xi` on `[-tau, 0]`, plus the two
//! built-in example problems (a globally one-sided-Lipschitz cubic and a
//! locally one-sided-Lipschitz cosine model).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, norm};
use crate::rational::Rational;

/// The coefficient triple `(D, b, sigma)`.
///
/// All maps write into caller-provided buffers; `diffusion` writes a
/// row-major `state_dim x noise_dim` matrix.
pub trait Coefficients: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn neutral(&self, y: &[f64], out: &mut [f64]);
    fn drift(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], y: &[f64], out: &mut [f64]);
}

/// `D(y) = -a y`, `b(x, y) = x - x^3 + a y - a^3 y^3`, `sigma(x, y) = x + a y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicGlobal {
    pub a: f64,
}

impl Coefficients for CubicGlobal {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn neutral(&self, y: &[f64], out: &mut [f64]) {
        out[0] = -self.a * y[0];
    }
    fn drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let (x, y, a) = (x[0], y[0], self.a);
        out[0] = x - x * x * x + a * y - a * a * a * y * y * y;
    }
    fn diffusion(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = x[0] + self.a * y[0];
    }
}

/// `D(y) = cos(y) / 4`, `b(x, y) = x - x^3 + cos y`, `sigma(x, y) = y sin x + x sin y`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CosineLocal;

impl Coefficients for CosineLocal {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn neutral(&self, y: &[f64], out: &mut [f64]) {
        out[0] = 0.25 * y[0].cos();
    }
    fn drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let (x, y) = (x[0], y[0]);
        out[0] = x - x * x * x + y.cos();
    }
    fn diffusion(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let (x, y) = (x[0], y[0]);
        out[0] = y * x.sin() + x * y.sin();
    }
}

/// `D = 0`, `b = 0`, `sigma = 0` in any dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroDynamics {
    pub state_dim: usize,
    pub noise_dim: usize,
}

impl Coefficients for ZeroDynamics {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn neutral(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn drift(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn diffusion(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

type NeutralFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type PairFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// User-supplied coefficients from closures.
#[derive(Clone)]
pub struct FnCoefficients {
    state_dim: usize,
    noise_dim: usize,
    neutral: Arc<NeutralFn>,
    drift: Arc<PairFn>,
    diffusion: Arc<PairFn>,
}

impl FnCoefficients {
    pub fn new(
        state_dim: usize,
        noise_dim: usize,
        neutral: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        drift: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FnCoefficients {
            state_dim,
            noise_dim,
            neutral: Arc::new(neutral),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
        }
    }
}

impl fmt::Debug for FnCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnCoefficients")
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .finish_non_exhaustive()
    }
}

impl Coefficients for FnCoefficients {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn neutral(&self, y: &[f64], out: &mut [f64]) {
        (self.neutral)(y, out)
    }
    fn drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.drift)(x, y, out)
    }
    fn diffusion(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, y, out)
    }
}

/// Deterministic initial segment `xi: [-tau, 0] -> R^n`.
#[derive(Clone)]
pub enum InitialSegment {
    /// `xi(t) = c`
    Constant(Vec<f64>),
    /// `xi(t) = c cos t`
    Cosine(Vec<f64>),
    /// `xi(t) = c t`
    Linear(Vec<f64>),
    Custom {
        dim: usize,
        f: SegmentFn,
    },
}

/// Custom initial path `t -> xi(t)` written into the output slice.
pub type SegmentFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

impl InitialSegment {
    pub fn constant(c: f64) -> Self {
        InitialSegment::Constant(vec![c])
    }

    pub fn cosine(c: f64) -> Self {
        InitialSegment::Cosine(vec![c])
    }

    pub fn custom(dim: usize, f: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        InitialSegment::Custom { dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialSegment::Constant(c) | InitialSegment::Cosine(c) | InitialSegment::Linear(c) => {
                c.len()
            }
            InitialSegment::Custom { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        match self {
            InitialSegment::Constant(c) => out.copy_from_slice(c),
            InitialSegment::Cosine(c) => {
                let ct = t.cos();
                for (o, ci) in out.iter_mut().zip(c) {
                    *o = ci * ct;
                }
            }
            InitialSegment::Linear(c) => {
                for (o, ci) in out.iter_mut().zip(c) {
                    *o = ci * t;
                }
            }
            InitialSegment::Custom { f, .. } => f(t, out),
        }
    }

    /// Lipschitz modulus on `[-tau, 0]` for the built-in segments.
    pub fn lipschitz(&self, delay: f64) -> Option<f64> {
        match self {
            InitialSegment::Constant(_) => Some(0.0),
            InitialSegment::Cosine(c) => {
                // |d/dt cos t| = |sin t| <= sin(min(tau, pi/2)) on [-tau, 0]
                Some(norm(c) * delay.min(std::f64::consts::FRAC_PI_2).sin())
            }
            InitialSegment::Linear(c) => Some(norm(c)),
            InitialSegment::Custom { .. } => None,
        }
    }
}

impl fmt::Debug for InitialSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialSegment::Constant(c) => write!(f, "Constant({c:?})"),
            InitialSegment::Cosine(c) => write!(f, "Cosine({c:?})"),
            InitialSegment::Linear(c) => write!(f, "Linear({c:?})"),
            InitialSegment::Custom { dim, .. } => write!(f, "Custom(dim = {dim})"),
        }
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub coefficients: Arc<dyn Coefficients>,
    pub delay: Rational,
    pub horizon: Rational,
    pub initial: InitialSegment,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("state_dim", &self.state_dim())
            .field("noise_dim", &self.noise_dim())
            .field("delay", &self.delay)
            .field("horizon", &self.horizon)
            .field("initial", &self.initial)
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(
        coefficients: Arc<dyn Coefficients>,
        delay: Rational,
        horizon: Rational,
        initial: InitialSegment,
    ) -> Result<Self> {
        if !delay.is_positive() {
            return Err(Error::ParameterOutOfRange(format!("delay must be positive, got {delay}")));
        }
        if horizon <= delay {
            return Err(Error::ParameterOutOfRange(format!(
                "horizon must exceed the delay (T = {horizon}, tau = {delay})"
            )));
        }
        let n = coefficients.state_dim();
        if n == 0 || coefficients.noise_dim() == 0 {
            return Err(Error::ParameterOutOfRange("dimensions must be positive".into()));
        }
        if initial.dim() != n {
            return Err(Error::ParameterOutOfRange(format!(
                "initial segment has dimension {} but the state has dimension {n}",
                initial.dim()
            )));
        }
        Ok(ProblemSpec {
            coefficients,
            delay,
            horizon,
            initial,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.coefficients.state_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.coefficients.noise_dim()
    }

    /// `D(0)`; the neutral map is centred when this is zero.
    pub fn neutral_at_origin(&self) -> Vec<f64> {
        let n = self.state_dim();
        let mut d0 = vec![0.0; n];
        self.coefficients.neutral(&vec![0.0; n], &mut d0);
        d0
    }
}

/// `[xi(-m step), xi((-m+1) step), ..., xi(0)]` with `step = tau / m`, flattened
/// row-major (`(m + 1) x n`).
pub fn sample_initial_grid(spec: &ProblemSpec, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::GridMismatch("initial grid needs m >= 1".into()));
    }
    let n = spec.state_dim();
    let mut out = vec![0.0; (m + 1) * n];
    let (p, q) = (spec.delay.numer() as f64, spec.delay.denom() as f64);
    for (j, row) in out.chunks_exact_mut(n).enumerate() {
        let k = j as f64 - m as f64;
        // t = k * tau / m with one rounding in the division
        let t = (k * p) / (m as f64 * q);
        spec.initial.eval(t, row);
        if !all_finite(row) {
            return Err(Error::InvalidCoefficient {
                coefficient: "initial segment",
                x: vec![t],
                y: vec![],
            });
        }
    }
    Ok(out)
}

/// Constants attached to radius `R` for the local conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalConstants {
    pub radius: f64,
    /// Local one-sided Lipschitz constant of `b` and Lipschitz bound of `sigma`.
    pub l_r: f64,
    /// `sup_{|x| v |y| <= R} |b(x, y)|`
    pub l_bar_r: f64,
    /// Local one-sided Lipschitz constant of the balanced tamed drift.
    pub m_r: f64,
    /// `sup |b - b_bar_delta| / delta^alpha` on the ball.
    pub n_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    /// Contraction constant of the neutral map, in `(0, 1/2)`.
    pub kappa: f64,
    /// Hölder constant of the initial segment for `q = 1`.
    pub k1: f64,
    pub k2: Option<f64>,
    pub k3: Option<f64>,
    pub k4: Option<f64>,
    pub l: Option<f64>,
    pub p: f64,
    /// Radius-indexed local constants, sorted by radius.
    pub local: Vec<LocalConstants>,
}

impl AssumptionConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 0.5) {
            return Err(Error::ParameterOutOfRange(format!("kappa must lie in (0, 1/2), got {}", self.kappa)));
        }
        if !(self.p >= 2.0) {
            return Err(Error::ParameterOutOfRange(format!("p must be at least 2, got {}", self.p)));
        }
        for (name, v) in [("K2", self.k2), ("K3", self.k3), ("K4", self.k4)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::ParameterOutOfRange(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if let Some(l) = self.l {
            if !(l >= 0.0) {
                return Err(Error::ParameterOutOfRange(format!("l must be non-negative, got {l}")));
            }
        }
        Ok(())
    }

    /// Smallest recorded radius at least `radius`.
    pub fn local_at(&self, radius: f64) -> Option<&LocalConstants> {
        self.local.iter().find(|c| c.radius >= radius)
    }

    pub fn insert_local(&mut self, c: LocalConstants) {
        match self.local.iter().position(|e| e.radius == c.radius) {
            Some(i) => self.local[i] = c,
            None => {
                self.local.push(c);
                self.local.sort_by(|a, b| a.radius.total_cmp(&b.radius));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    CubicGlobal,
    CosineLocal,
    /// Zero coefficients; a fixture for degenerate-case checks.
    Zero,
}

impl ModelId {
    pub fn name(&self) -> &'static str {
        match self {
            ModelId::CubicGlobal => "cubic-global",
            ModelId::CosineLocal => "cosine-local",
            ModelId::Zero => "zero",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct ExampleModel {
    pub id: ModelId,
    pub spec: ProblemSpec,
    pub constants: AssumptionConstants,
    /// Neutral/delay coupling for `CubicGlobal`.
    pub parameter_a: Option<f64>,
}

impl ExampleModel {
    /// `CubicGlobal` with `tau = 1`, `T = 2`, `xi = 1`.
    pub fn cubic_global(a: f64) -> Result<Self> {
        make_example(ModelId::CubicGlobal, a, InitialSegment::constant(1.0), Rational::integer(1), Rational::integer(2))
    }

    /// `CosineLocal` with `tau = 1`, `T = 2`, `xi = 1`.
    pub fn cosine_local() -> Result<Self> {
        make_example(ModelId::CosineLocal, 0.0, InitialSegment::constant(1.0), Rational::integer(1), Rational::integer(2))
    }
}

pub fn make_example(
    id: ModelId,
    a: f64,
    xi: InitialSegment,
    delay: Rational,
    horizon: Rational,
) -> Result<ExampleModel> {
    let lip = xi.lipschitz(delay.to_f64());
    let k1 = lip.map_or(1.0, |l| l.max(1.0));
    let (coefficients, constants, parameter_a): (Arc<dyn Coefficients>, _, _) = match id {
        ModelId::CubicGlobal => {
            if !(a.abs() < 0.5) || a == 0.0 {
                return Err(Error::ParameterOutOfRange(format!(
                    "CubicGlobal needs 0 < |a| < 1/2, got a = {a}"
                )));
            }
            // |b(x,y) - b(x',y')| <= 3/2 (1 + x^2 + x'^2 + y^2 + y'^2)(|x - x'| + |y - y'|)
            let constants = AssumptionConstants {
                kappa: a.abs(),
                k1,
                k2: None,
                k3: None,
                k4: Some(1.5),
                l: Some(2.0),
                p: 2.0,
                local: Vec::new(),
            };
            (Arc::new(CubicGlobal { a }), constants, Some(a))
        }
        ModelId::CosineLocal => {
            let constants = AssumptionConstants {
                kappa: 0.25,
                k1,
                k2: None,
                k3: None,
                k4: None,
                l: None,
                p: 2.0,
                local: Vec::new(),
            };
            (Arc::new(CosineLocal), constants, None)
        }
        ModelId::Zero => {
            // any kappa in the window is valid for D = 0
            let constants = AssumptionConstants {
                kappa: 0.25,
                k1,
                k2: None,
                k3: None,
                k4: None,
                l: None,
                p: 2.0,
                local: Vec::new(),
            };
            (Arc::new(ZeroDynamics { state_dim: 1, noise_dim: 1 }), constants, None)
        }
    };
    let spec = ProblemSpec::new(coefficients, delay, horizon, xi)?;
    Ok(ExampleModel {
        id,
        spec,
        constants,
        parameter_a,
    })
}
