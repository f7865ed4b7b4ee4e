//! Root solver for the implicit step `u = g(u)`.
//!
//! Fixed-point iteration from the explicit predictor; if the residual stops
//! contracting (10 non-decreasing residuals in a row), turns non-finite, or
//! the iteration budget runs out, Newton's method on `F(u) = u - g(u)` with a
//! forward-difference Jacobian takes over from the best iterate seen.
//! Once the tolerance is met, a few more fixed-point sweeps run while the
//! residual keeps falling, so per-step error does not accumulate at the
//! tolerance level over long paths.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, scratch, Scratch};

const STALL_LIMIT: usize = 10;
const MAX_BACKTRACKS: usize = 30;
const POLISH_LIMIT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    FixedPoint,
    NewtonFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitSolverPolicy {
    pub method: SolverMethod,
    pub tol_residual: f64,
    pub max_iters: usize,
    pub fd_jacobian_eps: f64,
}

impl Default for ImplicitSolverPolicy {
    fn default() -> Self {
        ImplicitSolverPolicy {
            method: SolverMethod::NewtonFallback,
            tol_residual: 1e-12,
            max_iters: 100,
            fd_jacobian_eps: 1e-7,
        }
    }
}

impl ImplicitSolverPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_residual > 0.0) {
            return Err(Error::ParameterOutOfRange(format!(
                "solver tolerance must be positive, got {}",
                self.tol_residual
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::ParameterOutOfRange("solver needs max_iters >= 1".into()));
        }
        if !(self.fd_jacobian_eps > 0.0) {
            return Err(Error::ParameterOutOfRange(format!(
                "finite-difference step must be positive, got {}",
                self.fd_jacobian_eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOutcome {
    /// Evaluations of `g` in the fixed-point phase plus Newton steps.
    pub iterations: usize,
    pub residual: f64,
    pub used_newton: bool,
}

/// Residual `|u - g(u)|`, with evaluation failures mapped to `+inf`.
fn residual<G>(g: &mut G, u: &[f64], gu: &mut [f64]) -> f64
where
    G: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    match g(u, gu) {
        Ok(()) => {
            let r = dist(u, gu);
            if r.is_finite() {
                r
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    }
}

/// Solves `u = g(u)` in place; `u` holds the initial guess on entry.
///
/// `step` only labels the error.
pub fn solve_implicit<G>(mut g: G, u: &mut [f64], policy: &ImplicitSolverPolicy, step: usize) -> Result<SolveOutcome>
where
    G: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = u.len();
    let mut gu = scratch(n);
    let mut best: Scratch = Scratch::from_slice(u);
    let mut best_res = f64::INFINITY;
    let mut prev = f64::INFINITY;
    let mut stalled = 0;
    let mut iterations = 0;

    while iterations < policy.max_iters {
        iterations += 1;
        let r = residual(&mut g, u, &mut gu);
        if r <= policy.tol_residual {
            let (extra, r) = polish(&mut g, u, &mut gu, r);
            return Ok(SolveOutcome {
                iterations: iterations + extra,
                residual: r,
                used_newton: false,
            });
        }
        if r < best_res {
            best_res = r;
            best.copy_from_slice(u);
        }
        if !r.is_finite() {
            break;
        }
        stalled = if r >= prev { stalled + 1 } else { 0 };
        prev = r;
        if stalled >= STALL_LIMIT && policy.method == SolverMethod::NewtonFallback {
            break;
        }
        u.copy_from_slice(&gu);
    }

    if policy.method == SolverMethod::FixedPoint {
        return Err(Error::SolverNonConvergence {
            step,
            iterations,
            residual: best_res,
        });
    }

    // best iterate so far, or the caller's guess if every evaluation failed
    u.copy_from_slice(&best);
    let newton = newton(&mut g, u, policy);
    let (newton_iters, res) = match newton {
        Ok(v) => v,
        Err((k, r)) => {
            return Err(Error::SolverNonConvergence {
                step,
                iterations: iterations + k,
                residual: r.min(best_res),
            })
        }
    };
    Ok(SolveOutcome {
        iterations: iterations + newton_iters,
        residual: res,
        used_newton: true,
    })
}

/// Fixed-point sweeps from a converged `u` (with `gu = g(u)`) while the
/// residual strictly decreases; returns the extra evaluations and the final
/// residual.
fn polish<G>(g: &mut G, u: &mut [f64], gu: &mut [f64], mut r: f64) -> (usize, f64)
where
    G: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let mut next = scratch(u.len());
    let mut g_next = scratch(u.len());
    let mut extra = 0;
    while r > 0.0 && extra < POLISH_LIMIT {
        next.copy_from_slice(gu);
        extra += 1;
        let rn = residual(g, &next, &mut g_next);
        if rn >= r {
            break;
        }
        u.copy_from_slice(&next);
        gu.copy_from_slice(&g_next);
        r = rn;
    }
    (extra, r)
}

fn newton<G>(g: &mut G, u: &mut [f64], policy: &ImplicitSolverPolicy) -> std::result::Result<(usize, f64), (usize, f64)>
where
    G: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = u.len();
    let mut gu = scratch(n);
    let mut trial = scratch(n);
    let mut g_trial = scratch(n);
    let mut r = residual(g, u, &mut gu);
    if !r.is_finite() {
        return Err((0, r));
    }
    for k in 1..=policy.max_iters {
        if r <= policy.tol_residual {
            return Ok((k - 1, r));
        }
        let f0 = DVector::from_iterator(n, u.iter().zip(gu.iter()).map(|(a, b)| a - b));
        let mut jac = DMatrix::<f64>::identity(n, n);
        for j in 0..n {
            let h = policy.fd_jacobian_eps * u[j].abs().max(1.0);
            trial.copy_from_slice(u);
            trial[j] += h;
            if g(&trial, &mut g_trial).is_err() {
                return Err((k, r));
            }
            for i in 0..n {
                jac[(i, j)] -= (g_trial[i] - gu[i]) / h;
            }
        }
        let Some(dx) = jac.lu().solve(&f0) else {
            return Err((k, r));
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                trial[i] = u[i] - lambda * dx[i];
            }
            let rt = residual(g, &trial, &mut g_trial);
            if rt < r {
                u.copy_from_slice(&trial);
                gu.copy_from_slice(&g_trial);
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err((k, r));
        }
    }
    if r <= policy.tol_residual {
        Ok((policy.max_iters, r))
    } else {
        Err((policy.max_iters, r))
    }
}

/// `|u - g(u)|` for reporting.
pub fn residual_of<G>(mut g: G, u: &[f64]) -> f64
where
    G: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let mut gu = scratch(u.len());
    residual(&mut g, u, &mut gu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_converges_in_one_iteration() {
        let mut u = [3.0];
        let out = solve_implicit(
            |_, out: &mut [f64]| {
                out[0] = 3.0;
                Ok(())
            },
            &mut u,
            &ImplicitSolverPolicy::default(),
            0,
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(u, [3.0]);
    }

    #[test]
    fn contraction_reaches_closed_form() {
        let mut u = [1.0];
        let out = solve_implicit(
            |u: &[f64], out: &mut [f64]| {
                out[0] = 1.0 - 0.5 * u[0];
                Ok(())
            },
            &mut u,
            &ImplicitSolverPolicy::default(),
            0,
        )
        .unwrap();
        assert!(out.iterations <= 60, "{} iterations", out.iterations);
        assert!((u[0] - 2.0 / 3.0).abs() <= 1e-12);
        assert!(!out.used_newton);
    }

    #[test]
    fn expanding_map_falls_back_to_newton() {
        // g(u) = 1 - 3u repels fixed-point iteration; root u = 1/4
        let mut u = [0.0];
        let out = solve_implicit(
            |u: &[f64], out: &mut [f64]| {
                out[0] = 1.0 - 3.0 * u[0];
                Ok(())
            },
            &mut u,
            &ImplicitSolverPolicy::default(),
            0,
        )
        .unwrap();
        assert!(out.used_newton);
        assert!((u[0] - 0.25).abs() < 1e-12);

        let mut u = [0.0];
        let fixed_only = ImplicitSolverPolicy {
            method: SolverMethod::FixedPoint,
            ..ImplicitSolverPolicy::default()
        };
        let err = solve_implicit(
            |u: &[f64], out: &mut [f64]| {
                out[0] = 1.0 - 3.0 * u[0];
                Ok(())
            },
            &mut u,
            &fixed_only,
            7,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SolverNonConvergence { step: 7, .. }));
    }

    #[test]
    fn rootless_map_reports_non_convergence() {
        let mut u = [0.0];
        let err = solve_implicit(
            |u: &[f64], out: &mut [f64]| {
                out[0] = u[0] + 1.0;
                Ok(())
            },
            &mut u,
            &ImplicitSolverPolicy::default(),
            3,
        )
        .unwrap_err();
        match err {
            Error::SolverNonConvergence { step, residual, .. } => {
                assert_eq!(step, 3);
                assert!(residual >= 1.0 - 1e-12);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn policy_validation() {
        assert!(ImplicitSolverPolicy::default().validate().is_ok());
        let bad = ImplicitSolverPolicy {
            tol_residual: 0.0,
            ..ImplicitSolverPolicy::default()
        };
        assert!(bad.validate().is_err());
    }
}
