//! One-step maps of the three integrators.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, mat_vec_add, scratch};
use crate::taming::TamedCoefficients;

use super::buffer::DelayBuffer;
use super::solver::{solve_implicit, ImplicitSolverPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
}

fn non_finite_state(x: &[f64], y: &[f64]) -> Error {
    Error::InvalidCoefficient {
        coefficient: "state",
        x: x.to_vec(),
        y: y.to_vec(),
    }
}

/// Solves `u = c + theta delta b(u, delayed)` in place, `u` starting at `c`.
fn implicit_drift_solve(
    c: &[f64],
    delayed: &[f64],
    theta_delta: f64,
    tamed: &TamedCoefficients,
    solver: &ImplicitSolverPolicy,
    step: usize,
    u: &mut [f64],
) -> Result<StepStats> {
    u.copy_from_slice(c);
    if theta_delta == 0.0 {
        return Ok(StepStats::default());
    }
    let mut b = scratch(c.len());
    let out = solve_implicit(
        |v: &[f64], g: &mut [f64]| {
            tamed.drift(v, delayed, &mut b)?;
            for i in 0..g.len() {
                g[i] = c[i] + theta_delta * b[i];
            }
            Ok(())
        },
        u,
        solver,
        step,
    )?;
    Ok(StepStats {
        iterations: out.iterations,
        residual: out.residual,
    })
}

/// `y_{k+1}` from the tamed theta scheme, where `k` is the newest index in
/// `history` and `dw` is `W(t_{k+1}) - W(t_k)`.
///
/// With a truncating [`TamedCoefficients`] this is the improved scheme.
pub fn step_tamed_theta(
    history: &DelayBuffer,
    dw: &[f64],
    theta: f64,
    delta: f64,
    tamed: &TamedCoefficients,
    solver: &ImplicitSolverPolicy,
    out: &mut [f64],
) -> Result<StepStats> {
    let n = tamed.state_dim();
    let k = history.newest_index();
    let m = history.lag() as i64;
    let y_k = history.get(k);
    let y_km = history.get(k - m);
    let y_k1m = history.get(k + 1 - m);

    let mut c = scratch(n);
    let mut tmp = scratch(n);
    let mut b = scratch(n);
    let mut sigma = scratch(n * tamed.noise_dim());

    tamed.neutral(y_k1m, &mut c);
    tamed.neutral(y_km, &mut tmp);
    tamed.drift_and_diffusion(y_k, y_km, &mut b, &mut sigma)?;
    for i in 0..n {
        c[i] += y_k[i] - tmp[i] + (1.0 - theta) * delta * b[i];
    }
    mat_vec_add(&sigma, dw, &mut c);
    if !all_finite(&c) {
        return Err(non_finite_state(y_k, y_km));
    }

    let step = (k + 1).max(0) as usize;
    let stats = implicit_drift_solve(&c, y_k1m, theta * delta, tamed, solver, step, out)?;
    if !all_finite(out) {
        return Err(non_finite_state(y_k, y_km));
    }
    Ok(stats)
}

/// Improved (truncated) tamed theta step; `tamed` must carry a cutoff.
pub fn step_improved(
    history: &DelayBuffer,
    dw: &[f64],
    theta: f64,
    delta: f64,
    tamed: &TamedCoefficients,
    solver: &ImplicitSolverPolicy,
    out: &mut [f64],
) -> Result<StepStats> {
    if tamed.cutoff_config().is_none() {
        return Err(Error::ParameterOutOfRange("the improved scheme needs a cutoff".into()));
    }
    step_tamed_theta(history, dw, theta, delta, tamed, solver, out)
}

/// `z_0 = xi(0) - theta delta b(xi(0), xi(-tau))`.
pub fn split_step_start(
    xi0: &[f64],
    xi_delay: &[f64],
    theta: f64,
    delta: f64,
    tamed: &TamedCoefficients,
    out: &mut [f64],
) -> Result<()> {
    let mut b = scratch(xi0.len());
    tamed.drift(xi0, xi_delay, &mut b)?;
    for i in 0..out.len() {
        out[i] = xi0[i] - theta * delta * b[i];
    }
    Ok(())
}

/// `y_k` from the implicit half of the split-step scheme.
///
/// `z_hist` has newest index `k`, `y_hist` has newest index `k - 1`.
pub fn split_step_solve(
    z_hist: &DelayBuffer,
    y_hist: &DelayBuffer,
    theta: f64,
    delta: f64,
    tamed: &TamedCoefficients,
    solver: &ImplicitSolverPolicy,
    out: &mut [f64],
) -> Result<StepStats> {
    let n = tamed.state_dim();
    let k = z_hist.newest_index();
    debug_assert_eq!(y_hist.newest_index(), k - 1);
    let m = z_hist.lag() as i64;
    let z_k = z_hist.get(k);
    let z_km = z_hist.get(k - m);
    let y_km = y_hist.get(k - m);

    let mut c = scratch(n);
    let mut tmp = scratch(n);
    tamed.neutral(y_km, &mut c);
    tamed.neutral(z_km, &mut tmp);
    for i in 0..n {
        c[i] += z_k[i] - tmp[i];
    }
    if !all_finite(&c) {
        return Err(non_finite_state(z_k, y_km));
    }
    let stats = implicit_drift_solve(&c, y_km, theta * delta, tamed, solver, k.max(0) as usize, out)?;
    if !all_finite(out) {
        return Err(non_finite_state(z_k, y_km));
    }
    Ok(stats)
}

/// `z_{k+1}` from the explicit half, given `y_k` and `y_{k-m}`.
pub fn split_step_advance(
    z_hist: &DelayBuffer,
    y_k: &[f64],
    y_km: &[f64],
    dw: &[f64],
    delta: f64,
    tamed: &TamedCoefficients,
    out: &mut [f64],
) -> Result<()> {
    let n = tamed.state_dim();
    let k = z_hist.newest_index();
    let m = z_hist.lag() as i64;
    let z_k = z_hist.get(k);
    let z_km = z_hist.get(k - m);
    let z_k1m = z_hist.get(k + 1 - m);

    let mut tmp = scratch(n);
    let mut b = scratch(n);
    let mut sigma = scratch(n * tamed.noise_dim());
    tamed.neutral(z_k1m, out);
    tamed.neutral(z_km, &mut tmp);
    tamed.drift_and_diffusion(y_k, y_km, &mut b, &mut sigma)?;
    for i in 0..n {
        out[i] += z_k[i] - tmp[i] + delta * b[i];
    }
    mat_vec_add(&sigma, dw, out);
    if !all_finite(out) {
        return Err(non_finite_state(y_k, y_km));
    }
    Ok(())
}

/// One split-step update: `y_k` from the implicit equation, then `z_{k+1}`.
///
/// `z_hist` has newest index `k`, `y_hist` newest index `k - 1`.
#[allow(clippy::too_many_arguments)]
pub fn step_split_step(
    z_hist: &DelayBuffer,
    y_hist: &DelayBuffer,
    dw: &[f64],
    theta: f64,
    delta: f64,
    tamed: &TamedCoefficients,
    solver: &ImplicitSolverPolicy,
    y_out: &mut [f64],
    z_out: &mut [f64],
) -> Result<StepStats> {
    let stats = split_step_solve(z_hist, y_hist, theta, delta, tamed, solver, y_out)?;
    let k = z_hist.newest_index();
    let y_km = y_hist.get(k - z_hist.lag() as i64);
    split_step_advance(z_hist, y_out, y_km, dw, delta, tamed, z_out)?;
    Ok(stats)
}
