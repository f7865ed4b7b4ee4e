//! Tamed theta, split-step and improved truncated integrators.
//!
//! All three advance on the grid `t_k = k step` with `step = tau / m = T / M`.
//! The tamed theta step solves
//!
//! ```text
//! y_{k+1} - D(y_{k+1-m}) = y_k - D(y_{k-m}) + theta b(y_{k+1}, y_{k+1-m}) step
//!                        + (1 - theta) b(y_k, y_{k-m}) step + sigma(y_k, y_{k-m}) dW_k
//! ```
//!
//! with tamed `b`, `sigma`; the split-step form carries the auxiliary
//! sequence `z` and yields the same `y` at grid points; the improved scheme
//! replaces `b` by the cut-off balanced drift.

mod buffer;
mod solver;
mod step;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, norm};
use crate::model::{sample_initial_grid, AssumptionConstants, ProblemSpec};
use crate::paths::BrownianGrid;
use crate::rational::Rational;
use crate::taming::{CutoffConfig, TamedCoefficients, TamingConfig, TamingMode};

pub use buffer::DelayBuffer;
pub use solver::{residual_of, solve_implicit, ImplicitSolverPolicy, SolveOutcome, SolverMethod};
pub use step::{
    split_step_advance, split_step_solve, split_step_start, step_improved, step_split_step, step_tamed_theta,
    StepStats,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeVariant {
    TamedTheta,
    SplitStep,
    ImprovedTruncated,
}

impl SchemeVariant {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeVariant::TamedTheta => "tamed-theta",
            SchemeVariant::SplitStep => "split-step",
            SchemeVariant::ImprovedTruncated => "improved-truncated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuardMode {
    Strict,
    WarnOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub variant: SchemeVariant,
    pub theta: f64,
    pub delta: Rational,
    /// `tau / delta`
    pub m: usize,
    /// `T / delta`
    pub n_steps: usize,
    /// `None` runs the raw coefficients (untamed comparison arm).
    pub taming: Option<TamingConfig>,
    pub cutoff: Option<CutoffConfig>,
    pub solver: ImplicitSolverPolicy,
    pub guard_mode: GuardMode,
}

impl SchemeConfig {
    pub fn new(
        spec: &ProblemSpec,
        variant: SchemeVariant,
        theta: f64,
        delta: Rational,
        taming: Option<TamingConfig>,
        cutoff: Option<CutoffConfig>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::ParameterOutOfRange(format!("theta must lie in [0, 1], got {theta}")));
        }
        if !delta.is_positive() || delta >= Rational::integer(1) {
            return Err(Error::ParameterOutOfRange(format!("step must lie in (0, 1), got {delta}")));
        }
        let m = spec
            .delay
            .steps_of(delta)
            .ok_or_else(|| Error::GridMismatch(format!("step {delta} does not divide the delay {}", spec.delay)))?;
        let n_steps = spec
            .horizon
            .steps_of(delta)
            .ok_or_else(|| Error::GridMismatch(format!("step {delta} does not divide the horizon {}", spec.horizon)))?;
        if let Some(t) = &taming {
            t.validate()?;
        }
        match variant {
            SchemeVariant::ImprovedTruncated => {
                if !matches!(taming, Some(TamingConfig { mode: TamingMode::Balanced, .. })) || cutoff.is_none() {
                    return Err(Error::ParameterOutOfRange(
                        "the improved scheme needs balanced taming and a cutoff radius".into(),
                    ));
                }
            }
            _ => {
                if cutoff.is_some() {
                    return Err(Error::ParameterOutOfRange(format!(
                        "a cutoff applies to the improved scheme only, not {}",
                        variant.name()
                    )));
                }
            }
        }
        Ok(SchemeConfig {
            variant,
            theta,
            delta,
            m,
            n_steps,
            taming,
            cutoff,
            solver: ImplicitSolverPolicy::default(),
            guard_mode: GuardMode::Strict,
        })
    }

    pub fn with_solver(mut self, solver: ImplicitSolverPolicy) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_guard_mode(mut self, mode: GuardMode) -> Self {
        self.guard_mode = mode;
        self
    }

    pub fn delta_f64(&self) -> f64 {
        self.delta.to_f64()
    }

    /// Same configuration at another step size.
    pub fn at_step(&self, spec: &ProblemSpec, delta: Rational) -> Result<Self> {
        Ok(SchemeConfig::new(spec, self.variant, self.theta, delta, self.taming, self.cutoff)?
            .with_solver(self.solver)
            .with_guard_mode(self.guard_mode))
    }

    pub fn tamed_coefficients(&self, spec: &ProblemSpec) -> Result<TamedCoefficients> {
        let delta = self.delta_f64();
        match self.taming {
            None => Ok(TamedCoefficients::untamed(spec.coefficients.clone(), delta)),
            Some(t) => TamedCoefficients::new(spec.coefficients.clone(), delta, t, self.cutoff),
        }
    }
}

/// Sampled or user-supplied constants the guards consume.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GuardEstimates {
    /// One-sided Lipschitz constant of the tamed drift.
    pub k3_tilde: Option<f64>,
    /// Global one-sided Lipschitz constant of the truncated drift.
    pub m_bar: Option<f64>,
}

/// Step-size admissibility thresholds; `+inf` marks a bound that does not apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepGuards {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl StepGuards {
    pub fn min(&self) -> f64 {
        self.delta1.min(self.delta2).min(self.delta3)
    }
}

/// `1 / (theta K3~)`; `+inf` for `theta = 0` or a non-positive constant.
pub fn delta1(theta: f64, k3_tilde: f64) -> f64 {
    inverse_bound(theta, k3_tilde)
}

/// `6^{1-p} (2^{-p} - kappa^p) / (theta^p K5^p)`; `+inf` for `theta = 0`.
pub fn delta2(theta: f64, p: f64, kappa: f64, k5: f64) -> f64 {
    if theta == 0.0 {
        return f64::INFINITY;
    }
    6f64.powf(1.0 - p) * (2f64.powf(-p) - kappa.powf(p)) / (theta.powf(p) * k5.powf(p))
}

/// `1 / (theta M_bar)`; `+inf` for `theta = 0` or a non-positive constant.
pub fn delta3(theta: f64, m_bar: f64) -> f64 {
    inverse_bound(theta, m_bar)
}

fn inverse_bound(theta: f64, c: f64) -> f64 {
    if theta == 0.0 || c <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / (theta * c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    pub delta: f64,
    pub guards: StepGuards,
    pub mode: GuardMode,
    pub passed: bool,
    /// Constants that were needed but not supplied.
    pub missing: Vec<String>,
}

pub fn step_guards(cfg: &SchemeConfig, constants: &AssumptionConstants, estimated: &GuardEstimates) -> (StepGuards, Vec<String>) {
    let theta = cfg.theta;
    let k5 = cfg.taming.map_or(1.0, |t| t.k5);
    let mut missing = Vec::new();
    let mut need = |name: &str, v: Option<f64>| match v {
        Some(v) => v,
        None => {
            if theta > 0.0 {
                missing.push(name.to_string());
            }
            0.0
        }
    };
    let (d1, d3) = match cfg.variant {
        SchemeVariant::ImprovedTruncated => (f64::INFINITY, delta3(theta, need("M_bar", estimated.m_bar))),
        _ => (delta1(theta, need("K3_tilde", estimated.k3_tilde)), f64::INFINITY),
    };
    let guards = StepGuards {
        delta1: d1,
        delta2: delta2(theta, constants.p, constants.kappa, k5),
        delta3: d3,
    };
    (guards, missing)
}

/// Compares the configured step to the guards; strict mode rejects `delta >= min`.
pub fn check_guards(cfg: &SchemeConfig, constants: &AssumptionConstants, estimated: &GuardEstimates) -> Result<GuardReport> {
    let delta = cfg.delta_f64();
    let (guards, missing) = step_guards(cfg, constants, estimated);
    let passed = delta > 0.0 && delta < 1.0 && delta < guards.min();
    if !passed && cfg.guard_mode == GuardMode::Strict {
        return Err(Error::GuardViolation {
            delta,
            delta1: guards.delta1,
            delta2: guards.delta2,
            delta3: guards.delta3,
        });
    }
    Ok(GuardReport {
        delta,
        guards,
        mode: cfg.guard_mode,
        passed,
        missing,
    })
}

/// Grid trajectory of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub state_dim: usize,
    pub step: Rational,
    /// `y_{-m}, ..., y_0`, row-major.
    pub initial: Vec<f64>,
    /// `y_0, y_1, ...`, row-major; `n_steps + 1` rows unless the path blew up.
    pub y: Vec<f64>,
    /// `z_0, z_1, ...` for the split-step variant.
    pub z: Option<Vec<f64>>,
    /// Solver iterations spent on row `k` (zero for explicit rows).
    pub iterations: Vec<u32>,
    pub residuals: Vec<f64>,
    pub blew_up: bool,
    pub seed: u64,
    pub path_index: u64,
}

impl PathResult {
    pub fn len(&self) -> usize {
        self.y.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    pub fn state(&self, k: usize) -> &[f64] {
        &self.y[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn time(&self, k: usize) -> f64 {
        (k as f64 * self.step.numer() as f64) / self.step.denom() as f64
    }

    /// `max_k |y_k|^p` over the stored rows.
    pub fn sup_norm_pow(&self, p: f64) -> f64 {
        (0..self.len()).map(|k| norm(self.state(k)).powf(p)).fold(0.0, f64::max)
    }

    /// CSV with columns `k, t, y_1..y_n, iters, residual`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "k,t")?;
        for i in 1..=self.state_dim {
            write!(w, ",y_{i}")?;
        }
        writeln!(w, ",iters,residual")?;
        for k in 0..self.len() {
            write!(w, "{k},{:.16e}", self.time(k))?;
            for v in self.state(k) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w, ",{},{:.16e}", self.iterations[k], self.residuals[k])?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

/// Integrator bound to one problem and scheme configuration; reusable across
/// paths and safe to share between worker threads.
#[derive(Debug, Clone)]
pub struct Integrator {
    cfg: SchemeConfig,
    tamed: TamedCoefficients,
    initial: Vec<f64>,
    state_dim: usize,
    noise_dim: usize,
}

fn is_blow_up(e: &Error) -> bool {
    matches!(e, Error::InvalidCoefficient { .. })
}

impl Integrator {
    pub fn new(spec: &ProblemSpec, cfg: SchemeConfig) -> Result<Self> {
        cfg.solver.validate()?;
        if spec.delay.steps_of(cfg.delta) != Some(cfg.m) || spec.horizon.steps_of(cfg.delta) != Some(cfg.n_steps) {
            return Err(Error::GridMismatch(format!(
                "configuration (step {}, m = {}, M = {}) does not match the problem grid",
                cfg.delta, cfg.m, cfg.n_steps
            )));
        }
        let tamed = cfg.tamed_coefficients(spec)?;
        let initial = sample_initial_grid(spec, cfg.m)?;
        Ok(Integrator {
            state_dim: spec.state_dim(),
            noise_dim: spec.noise_dim(),
            cfg,
            tamed,
            initial,
        })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn tamed(&self) -> &TamedCoefficients {
        &self.tamed
    }

    pub fn initial_grid(&self) -> &[f64] {
        &self.initial
    }

    fn check_noise(&self, noise: &BrownianGrid) -> Result<()> {
        if noise.n_steps != self.cfg.n_steps || noise.step != self.cfg.delta || noise.noise_dim != self.noise_dim {
            return Err(Error::GridMismatch(format!(
                "noise grid ({} steps of {}, dimension {}) does not match the scheme ({} steps of {}, dimension {})",
                noise.n_steps, noise.step, noise.noise_dim, self.cfg.n_steps, self.cfg.delta, self.noise_dim
            )));
        }
        Ok(())
    }

    fn empty_result(&self, noise: &BrownianGrid) -> PathResult {
        let n = self.state_dim;
        let rows = self.cfg.n_steps + 1;
        let mut y = Vec::with_capacity(rows * n);
        y.extend_from_slice(&self.initial[self.cfg.m * n..]);
        PathResult {
            state_dim: n,
            step: self.cfg.delta,
            initial: self.initial.clone(),
            y,
            z: None,
            iterations: {
                let mut v = Vec::with_capacity(rows);
                v.push(0);
                v
            },
            residuals: {
                let mut v = Vec::with_capacity(rows);
                v.push(0.0);
                v
            },
            blew_up: false,
            seed: noise.seed,
            path_index: noise.path_index,
        }
    }

    pub fn run(&self, noise: &BrownianGrid) -> Result<PathResult> {
        self.check_noise(noise)?;
        match self.cfg.variant {
            SchemeVariant::TamedTheta | SchemeVariant::ImprovedTruncated => self.run_theta(noise),
            SchemeVariant::SplitStep => self.run_split(noise),
        }
    }

    fn run_theta(&self, noise: &BrownianGrid) -> Result<PathResult> {
        let n = self.state_dim;
        let (theta, delta) = (self.cfg.theta, self.cfg.delta_f64());
        let mut res = self.empty_result(noise);
        let mut hist = DelayBuffer::from_initial(&self.initial, n, self.cfg.m);
        let mut next = vec![0.0; n];
        for k in 0..self.cfg.n_steps {
            let step = if self.cfg.variant == SchemeVariant::ImprovedTruncated {
                step_improved(&hist, noise.increment(k), theta, delta, &self.tamed, &self.cfg.solver, &mut next)
            } else {
                step_tamed_theta(&hist, noise.increment(k), theta, delta, &self.tamed, &self.cfg.solver, &mut next)
            };
            match step {
                Ok(stats) => {
                    hist.push(&next);
                    res.y.extend_from_slice(&next);
                    res.iterations.push(stats.iterations as u32);
                    res.residuals.push(stats.residual);
                }
                Err(e) if is_blow_up(&e) => {
                    res.blew_up = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(res)
    }

    fn run_split(&self, noise: &BrownianGrid) -> Result<PathResult> {
        let n = self.state_dim;
        let m = self.cfg.m;
        let (theta, delta) = (self.cfg.theta, self.cfg.delta_f64());
        let mut res = self.empty_result(noise);

        let xi0 = &self.initial[m * n..];
        let xi_delay = &self.initial[..n];
        let mut z_init = self.initial.clone();
        let mut z_out = vec![0.0; n];
        let mut y_out = vec![0.0; n];
        let mut z_rows = Vec::with_capacity((self.cfg.n_steps + 1) * n);

        let started = split_step_start(xi0, xi_delay, theta, delta, &self.tamed, &mut z_out);
        if let Err(e) = started {
            if is_blow_up(&e) {
                res.blew_up = true;
                res.z = Some(z_rows);
                return Ok(res);
            }
            return Err(e);
        }
        z_init[m * n..].copy_from_slice(&z_out);
        z_rows.extend_from_slice(&z_out);
        let mut z_hist = DelayBuffer::from_initial(&z_init, n, m);
        let mut y_hist = DelayBuffer::from_initial(&self.initial, n, m);

        // z_1 from the given y_0
        let first = split_step_advance(&z_hist, xi0, xi_delay, noise.increment(0), delta, &self.tamed, &mut z_out);
        match first {
            Ok(()) => {
                z_hist.push(&z_out);
                z_rows.extend_from_slice(&z_out);
            }
            Err(e) if is_blow_up(&e) => {
                res.blew_up = true;
                res.z = Some(z_rows);
                return Ok(res);
            }
            Err(e) => return Err(e),
        }

        for k in 1..=self.cfg.n_steps {
            let solved = split_step_solve(&z_hist, &y_hist, theta, delta, &self.tamed, &self.cfg.solver, &mut y_out);
            let stats = match solved {
                Ok(s) => s,
                Err(e) if is_blow_up(&e) => {
                    res.blew_up = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            res.y.extend_from_slice(&y_out);
            res.iterations.push(stats.iterations as u32);
            res.residuals.push(stats.residual);
            if k == self.cfg.n_steps {
                break;
            }
            let y_km = y_hist.get(k as i64 - m as i64).to_vec();
            y_hist.push(&y_out);
            match split_step_advance(&z_hist, &y_out, &y_km, noise.increment(k), delta, &self.tamed, &mut z_out) {
                Ok(()) => {
                    z_hist.push(&z_out);
                    z_rows.extend_from_slice(&z_out);
                }
                Err(e) if is_blow_up(&e) => {
                    res.blew_up = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        debug_assert!(res.blew_up || all_finite(&res.y));
        res.z = Some(z_rows);
        Ok(res)
    }
}

pub fn integrate(spec: &ProblemSpec, cfg: SchemeConfig, noise: &BrownianGrid) -> Result<PathResult> {
    Integrator::new(spec, cfg)?.run(noise)
}
