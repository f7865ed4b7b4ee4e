//! Monte Carlo drivers: strong error against a coupled fine reference,
//! log-log order fits, moment studies and the within-step modulus.
//!
//! Paths are independent work units evaluated in parallel; per-path results
//! are collected in path order and reduced with [`pairwise_sum`], so the
//! numbers do not depend on the worker count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dist;
use crate::model::{AssumptionConstants, ProblemSpec};
use crate::paths::{coarsen, generate, pairwise_sum};
use crate::rational::Rational;
use crate::scheme::{check_guards, GuardEstimates, GuardReport, Integrator, PathResult, SchemeConfig};

/// Shared inputs of every study.
#[derive(Debug, Clone)]
pub struct StudyContext {
    pub model_name: String,
    pub spec: ProblemSpec,
    pub constants: AssumptionConstants,
    /// Template configuration; its step is replaced per level.
    pub scheme: SchemeConfig,
    pub guard_estimates: GuardEstimates,
    pub p: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool. Never affects results.
    pub workers: Option<usize>,
}

impl StudyContext {
    fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidExperiment("a study needs at least one path".into()));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!("moment order must be positive, got {}", self.p)));
        }
        if self.workers == Some(0) {
            return Err(Error::ParameterOutOfRange("worker count must be at least 1".into()));
        }
        Ok(())
    }

    fn integrator_at(&self, delta: Rational) -> Result<(Integrator, GuardReport)> {
        let cfg = self.scheme.at_step(&self.spec, delta)?;
        let report = check_guards(&cfg, &self.constants, &self.guard_estimates)?;
        Ok((Integrator::new(&self.spec, cfg)?, report))
    }

    fn alpha(&self) -> Option<f64> {
        self.scheme.taming.map(|t| t.alpha)
    }

    /// `{kind}_{model}_{scheme}_theta{theta}_alpha{alpha}_seed{seed}.csv`
    pub fn file_name(&self, kind: &str) -> String {
        let alpha = self.alpha().map_or_else(|| "none".to_string(), |a| a.to_string());
        format!(
            "{kind}_{}_{}_theta{}_alpha{alpha}_seed{}.csv",
            self.model_name,
            self.scheme.variant.name(),
            self.scheme.theta,
            self.seed
        )
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.workers {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Io(format!("cannot start worker pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares fit of `log error = slope log delta + intercept`.
pub fn fit_order(pairs: &[(f64, f64)]) -> Result<OrderFit> {
    if pairs.len() < 3 {
        return Err(Error::InvalidExperiment(format!(
            "regression needs at least 3 levels, got {}",
            pairs.len()
        )));
    }
    if let Some(&(d, e)) = pairs.iter().find(|(d, e)| !(*d > 0.0 && *e > 0.0 && d.is_finite() && e.is_finite())) {
        return Err(Error::DegenerateRegression(format!(
            "log-log fit needs positive finite values, got ({d}, {e})"
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = pairwise_sum(&xs) / n;
    let my = pairwise_sum(&ys) / n;
    let sxx = pairwise_sum(&xs.iter().map(|x| (x - mx) * (x - mx)).collect::<Vec<_>>());
    let sxy = pairwise_sum(&xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).collect::<Vec<_>>());
    if sxx == 0.0 {
        return Err(Error::DegenerateRegression("all step sizes coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = pairwise_sum(&xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).collect::<Vec<_>>());
    let ss_tot = pairwise_sum(&ys.iter().map(|y| (y - my).powi(2)).collect::<Vec<_>>());
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(OrderFit { slope, intercept, r2 })
}

/// Fit, or `None` with the degenerate marker when every value is zero.
fn fit_or_degenerate(pairs: &[(f64, f64)]) -> Result<Option<OrderFit>> {
    if pairs.len() >= 3 && pairs.iter().all(|p| p.1 == 0.0) {
        Ok(None)
    } else {
        fit_order(pairs).map(Some)
    }
}

pub const DEGENERATE_MARKER: &str = "degenerate: zero error";

/// Checks a level ladder against its reference and returns, per level, the
/// factor `level / reference`.
fn ladder_factors(levels: &[Rational], reference: Rational, min_factor: usize) -> Result<Vec<usize>> {
    if levels.len() < 3 {
        return Err(Error::InvalidExperiment(format!(
            "regression needs at least 3 levels, got {}",
            levels.len()
        )));
    }
    levels
        .iter()
        .map(|&l| {
            let j = l.dyadic_ratio_to(reference).ok_or_else(|| {
                Error::GridMismatch(format!("level {l} is not a dyadic multiple of the reference {reference}"))
            })?;
            let f = 1usize << j;
            if f < min_factor {
                return Err(Error::InvalidExperiment(format!(
                    "reference {reference} must be at least {min_factor}x finer than level {l}"
                )));
            }
            Ok(f)
        })
        .collect()
}

/// Mean of the finite entries of each column over the paths that kept all
/// entries, reduced in path order.
fn column_means(rows: &[Option<Vec<f64>>], width: usize) -> (Vec<f64>, usize) {
    let kept: Vec<&Vec<f64>> = rows.iter().flatten().collect();
    let means = (0..width)
        .map(|j| {
            if kept.is_empty() {
                f64::NAN
            } else {
                pairwise_sum(&kept.iter().map(|r| r[j]).collect::<Vec<_>>()) / kept.len() as f64
            }
        })
        .collect();
    (means, kept.len())
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut f = fs::File::create(&path)?;
    f.write_all(body.as_bytes())?;
    Ok(path)
}

fn fit_csv(fit: Option<&OrderFit>) -> String {
    match fit {
        Some(f) => format!("slope,intercept,r2\n{:.16e},{:.16e},{:.16e}\n", f.slope, f.intercept, f.r2),
        None => format!("slope,intercept,r2\nNaN,NaN,NaN\n# {DEGENERATE_MARKER}\n"),
    }
}

// ---------------------------------------------------------------- convergence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelError {
    pub level: usize,
    pub delta: Rational,
    /// `(mean over paths of max_k |y_k - y_ref(t_k)|^p)^(1/p)` on the coarsest grid.
    pub error_p: f64,
    pub n_paths: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub model: String,
    pub variant: String,
    pub theta: f64,
    pub alpha: Option<f64>,
    pub p: f64,
    pub reference: Rational,
    pub seed: u64,
    pub per_level: Vec<LevelError>,
    /// `None` when every error is zero; the order is then reported as NaN.
    pub fit: Option<OrderFit>,
    pub guard_reports: Vec<GuardReport>,
}

impl ConvergenceStudy {
    pub fn fitted_order(&self) -> f64 {
        self.fit.map_or(f64::NAN, |f| f.slope)
    }

    pub fn is_degenerate(&self) -> bool {
        self.fit.is_none()
    }

    pub fn excluded(&self) -> usize {
        self.per_level.first().map_or(0, |l| l.excluded)
    }

    /// Number of consecutive level pairs along which the error strictly
    /// decreases, out of `levels - 1`.
    pub fn decreasing_pairs(&self) -> usize {
        self.per_level.windows(2).filter(|w| w[1].error_p < w[0].error_p).count()
    }

    pub fn convergence_csv(&self) -> String {
        let mut s = String::from("level,delta,error_p,n_paths,excluded\n");
        for l in &self.per_level {
            s += &format!(
                "{},{:.16e},{:.16e},{},{}\n",
                l.level,
                l.delta.to_f64(),
                l.error_p,
                l.n_paths,
                l.excluded
            );
        }
        s
    }

    pub fn fit_csv(&self) -> String {
        fit_csv(self.fit.as_ref())
    }
}

/// Strong errors of `levels` against the same scheme at `reference`, coupled
/// through one fine Brownian grid per path.
pub fn run_convergence(ctx: &StudyContext, levels: &[Rational], reference: Rational) -> Result<ConvergenceStudy> {
    ctx.validate()?;
    let factors = ladder_factors(levels, reference, 8)?;
    let mut guard_reports = Vec::with_capacity(levels.len() + 1);
    let mut integrators = Vec::with_capacity(levels.len());
    for &l in levels {
        let (it, rep) = ctx.integrator_at(l)?;
        integrators.push(it);
        guard_reports.push(rep);
    }
    let (reference_it, rep) = ctx.integrator_at(reference)?;
    guard_reports.push(rep);

    let coarsest = *factors.iter().max().expect("at least 3 levels");
    let coarse_steps = integrators[factors.iter().position(|&f| f == coarsest).unwrap()].config().n_steps;
    let n_ref = reference_it.config().n_steps;
    let d = ctx.spec.noise_dim();
    let p = ctx.p;

    let per_path = |idx: usize| -> Option<Vec<f64>> {
        let fine = generate(ctx.seed, idx as u64, d, reference, n_ref).ok()?;
        let y_ref = reference_it.run(&fine).ok().filter(|r| !r.blew_up)?;
        let mut errs = Vec::with_capacity(levels.len());
        for (it, &f) in integrators.iter().zip(&factors) {
            let noise = coarsen(&fine, f).ok()?;
            let y = it.run(&noise).ok().filter(|r| !r.blew_up)?;
            // both subsampled onto the coarsest grid
            let (stride, ref_stride) = (coarsest / f, coarsest);
            let e = (0..=coarse_steps)
                .map(|k| dist(y.state(k * stride), y_ref.state(k * ref_stride)).powf(p))
                .fold(0.0, f64::max);
            errs.push(e);
        }
        Some(errs)
    };
    let rows: Vec<Option<Vec<f64>>> = ctx.in_pool(|| (0..ctx.n_paths).into_par_iter().map(per_path).collect())?;
    let (means, kept) = column_means(&rows, levels.len());
    let excluded = ctx.n_paths - kept;
    let per_level: Vec<LevelError> = levels
        .iter()
        .zip(&means)
        .enumerate()
        .map(|(j, (&delta, &m))| LevelError {
            level: j,
            delta,
            error_p: m.powf(1.0 / p),
            n_paths: kept,
            excluded,
        })
        .collect();
    if kept == 0 {
        return Err(Error::InvalidExperiment("every path was excluded".into()));
    }
    let pairs: Vec<(f64, f64)> = per_level.iter().map(|l| (l.delta.to_f64(), l.error_p)).collect();
    Ok(ConvergenceStudy {
        model: ctx.model_name.clone(),
        variant: ctx.scheme.variant.name().to_string(),
        theta: ctx.scheme.theta,
        alpha: ctx.alpha(),
        p,
        reference,
        seed: ctx.seed,
        per_level,
        fit: fit_or_degenerate(&pairs)?,
        guard_reports,
    })
}

/// Writes the convergence and fit CSVs into `dir`.
pub fn write_convergence(ctx: &StudyContext, study: &ConvergenceStudy, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_file(dir, &ctx.file_name("convergence"), &study.convergence_csv())?,
        write_file(dir, &ctx.file_name("fit"), &study.fit_csv())?,
    ])
}

// -------------------------------------------------------------------- moments

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub delta: Rational,
    /// Mean of `max_k |y_k|^p` over paths that did not blow up.
    pub moment_p: f64,
    pub divergence_fraction: f64,
    /// Paths dropped for a solver failure.
    pub excluded: usize,
}

/// Untamed explicit comparison run on its own problem (typically a larger
/// initial segment).
#[derive(Debug, Clone)]
pub struct ComparisonArm {
    pub spec: ProblemSpec,
    pub delta: Rational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentStudy {
    pub model: String,
    pub variant: String,
    pub theta: f64,
    pub alpha: Option<f64>,
    pub p: f64,
    pub n_paths: usize,
    pub per_step: Vec<MomentRow>,
    pub comparison: Option<MomentRow>,
    pub guard_reports: Vec<GuardReport>,
}

impl MomentStudy {
    /// `max / min` of the sampled moments across steps.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .per_step
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.moment_p), hi.max(r.moment_p)));
        hi / lo
    }

    pub fn blow_ups(&self) -> f64 {
        self.per_step.iter().map(|r| r.divergence_fraction).fold(0.0, f64::max)
    }

    fn rows_csv(rows: &[MomentRow]) -> String {
        let mut s = String::from("delta,moment_p,divergence_fraction\n");
        for r in rows {
            s += &format!("{:.16e},{:.16e},{:.16e}\n", r.delta.to_f64(), r.moment_p, r.divergence_fraction);
        }
        s
    }

    pub fn moments_csv(&self) -> String {
        Self::rows_csv(&self.per_step)
    }

    pub fn comparison_csv(&self) -> Option<String> {
        self.comparison.as_ref().map(|c| Self::rows_csv(std::slice::from_ref(c)))
    }
}

fn moment_row(ctx: &StudyContext, it: &Integrator, delta: Rational) -> Result<MomentRow> {
    let n = it.config().n_steps;
    let d = it.tamed().noise_dim();
    let p = ctx.p;
    // Some(Some(m)) survived, Some(None) blew up, None excluded
    let per_path = |idx: usize| -> Option<Option<f64>> {
        let noise = generate(ctx.seed, idx as u64, d, delta, n).ok()?;
        let r: PathResult = it.run(&noise).ok()?;
        Some((!r.blew_up).then(|| r.sup_norm_pow(p)))
    };
    let rows: Vec<Option<Option<f64>>> = ctx.in_pool(|| (0..ctx.n_paths).into_par_iter().map(per_path).collect())?;
    let run: Vec<Option<f64>> = rows.iter().flatten().copied().collect();
    let survivors: Vec<f64> = run.iter().flatten().copied().collect();
    let moment_p = if survivors.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(&survivors) / survivors.len() as f64
    };
    Ok(MomentRow {
        delta,
        moment_p,
        divergence_fraction: if run.is_empty() {
            f64::NAN
        } else {
            (run.len() - survivors.len()) as f64 / run.len() as f64
        },
        excluded: ctx.n_paths - run.len(),
    })
}

/// `E max_k |y_k|^p` across `steps`, plus the optional untamed arm.
pub fn run_moment_study(ctx: &StudyContext, steps: &[Rational], comparison: Option<&ComparisonArm>) -> Result<MomentStudy> {
    ctx.validate()?;
    if steps.is_empty() {
        return Err(Error::InvalidExperiment("a moment study needs at least one step".into()));
    }
    let mut guard_reports = Vec::new();
    let mut per_step = Vec::with_capacity(steps.len());
    for &delta in steps {
        let (it, rep) = ctx.integrator_at(delta)?;
        guard_reports.push(rep);
        per_step.push(moment_row(ctx, &it, delta)?);
    }
    let comparison = match comparison {
        Some(arm) => {
            let cfg = SchemeConfig::new(&arm.spec, crate::scheme::SchemeVariant::TamedTheta, 0.0, arm.delta, None, None)?
                .with_solver(ctx.scheme.solver)
                .with_guard_mode(ctx.scheme.guard_mode);
            let it = Integrator::new(&arm.spec, cfg)?;
            Some(moment_row(ctx, &it, arm.delta)?)
        }
        None => None,
    };
    Ok(MomentStudy {
        model: ctx.model_name.clone(),
        variant: ctx.scheme.variant.name().to_string(),
        theta: ctx.scheme.theta,
        alpha: ctx.alpha(),
        p: ctx.p,
        n_paths: ctx.n_paths,
        per_step,
        comparison,
        guard_reports,
    })
}

pub fn write_moments(ctx: &StudyContext, study: &MomentStudy, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = vec![write_file(dir, &ctx.file_name("moments"), &study.moments_csv())?];
    if let Some(c) = study.comparison_csv() {
        out.push(write_file(dir, &ctx.file_name("moments_untamed"), &c)?);
    }
    Ok(out)
}

// -------------------------------------------------------------------- modulus

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusRow {
    pub delta: Rational,
    /// `E max_k max_{fine t in [t_k, t_k+1)} |Y(t) - Y(t_k)|^p`.
    pub modulus_p: f64,
    pub n_paths: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusStudy {
    pub model: String,
    pub variant: String,
    pub theta: f64,
    pub p: f64,
    pub reference: Rational,
    pub rows: Vec<ModulusRow>,
    pub fit: Option<OrderFit>,
    pub guard_reports: Vec<GuardReport>,
}

impl ModulusStudy {
    pub fn slope(&self) -> f64 {
        self.fit.map_or(f64::NAN, |f| f.slope)
    }

    pub fn modulus_csv(&self) -> String {
        let mut s = String::from("delta,modulus_p,n_paths,excluded\n");
        for r in &self.rows {
            s += &format!("{:.16e},{:.16e},{},{}\n", r.delta.to_f64(), r.modulus_p, r.n_paths, r.excluded);
        }
        s
    }

    pub fn fit_csv(&self) -> String {
        fit_csv(self.fit.as_ref())
    }
}

/// Within-step deviation: the reference solution at every fine point of
/// `[t_k, t_{k+1})` against the level solution's left endpoint `y_k`.
pub fn run_modulus_study(ctx: &StudyContext, levels: &[Rational], reference: Rational) -> Result<ModulusStudy> {
    ctx.validate()?;
    let factors = ladder_factors(levels, reference, 2)?;
    let mut guard_reports = Vec::new();
    let mut integrators = Vec::new();
    for &l in levels {
        let (it, rep) = ctx.integrator_at(l)?;
        integrators.push(it);
        guard_reports.push(rep);
    }
    let (reference_it, rep) = ctx.integrator_at(reference)?;
    guard_reports.push(rep);
    let n_ref = reference_it.config().n_steps;
    let d = ctx.spec.noise_dim();
    let p = ctx.p;

    let per_path = |idx: usize| -> Option<Vec<f64>> {
        let fine = generate(ctx.seed, idx as u64, d, reference, n_ref).ok()?;
        let y_ref = reference_it.run(&fine).ok().filter(|r| !r.blew_up)?;
        let mut out = Vec::with_capacity(levels.len());
        for (it, &f) in integrators.iter().zip(&factors) {
            let y = it.run(&coarsen(&fine, f).ok()?).ok().filter(|r| !r.blew_up)?;
            let mut worst: f64 = 0.0;
            for k in 0..it.config().n_steps {
                let left = y.state(k);
                for s in 0..f {
                    worst = worst.max(dist(y_ref.state(k * f + s), left).powf(p));
                }
            }
            out.push(worst);
        }
        Some(out)
    };
    let rows: Vec<Option<Vec<f64>>> = ctx.in_pool(|| (0..ctx.n_paths).into_par_iter().map(per_path).collect())?;
    let (means, kept) = column_means(&rows, levels.len());
    if kept == 0 {
        return Err(Error::InvalidExperiment("every path was excluded".into()));
    }
    let rows: Vec<ModulusRow> = levels
        .iter()
        .zip(&means)
        .map(|(&delta, &m)| ModulusRow {
            delta,
            modulus_p: m,
            n_paths: kept,
            excluded: ctx.n_paths - kept,
        })
        .collect();
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.delta.to_f64(), r.modulus_p)).collect();
    Ok(ModulusStudy {
        model: ctx.model_name.clone(),
        variant: ctx.scheme.variant.name().to_string(),
        theta: ctx.scheme.theta,
        p,
        reference,
        rows,
        fit: fit_or_degenerate(&pairs)?,
        guard_reports,
    })
}

pub fn write_modulus(ctx: &StudyContext, study: &ModulusStudy, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_file(dir, &ctx.file_name("modulus"), &study.modulus_csv())?,
        write_file(dir, &ctx.file_name("modulus_fit"), &study.fit_csv())?,
    ])
}

/// `2^-lo, ..., 2^-hi`.
pub fn dyadic_ladder(lo: u32, hi: u32) -> Vec<Rational> {
    (lo..=hi).map(Rational::dyadic).collect()
}
