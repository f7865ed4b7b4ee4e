//! Command-line front end: TOML run configuration, subcommand dispatch,
//! CSV and run-metadata output.
//!
//! Exit codes:
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 1    | i/o or other failure                      |
//! | 2    | schema or parameter error                 |
//! | 3    | step-size guard violation (strict mode)   |
//! | 4    | implicit solver failure                   |
//! | 5    | grid mismatch                             |
//! | 6    | invalid experiment or degenerate fit      |

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    run_convergence, run_modulus_study, run_moment_study, write_convergence, write_moments, write_modulus,
    ComparisonArm, StudyContext,
};
use crate::model::{make_example, ExampleModel, InitialSegment, ModelId};
use crate::paths::generate;
use crate::rational::Rational;
use crate::scheme::{
    check_guards, GuardEstimates, GuardMode, GuardReport, ImplicitSolverPolicy, Integrator, SchemeConfig,
    SchemeVariant, SolverMethod,
};
use crate::taming::{CutoffConfig, TamingConfig, TamingMode};
use crate::verify::{check_assumption, estimate_guard_constants, AssumptionId, VerifyConfig};

pub const DEFAULT_SEED: u64 = 20240401;
/// Significant digits of every number written to CSV.
pub const CSV_PRECISION: u32 = 17;

// ------------------------------------------------------------------- schema

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialChoice {
    /// `xi(t) = value`
    Constant { value: f64 },
    /// `xi(t) = amplitude cos t`
    Cosine { amplitude: f64 },
}

impl InitialChoice {
    fn segment(&self) -> InitialSegment {
        match *self {
            InitialChoice::Constant { value } => InitialSegment::constant(value),
            InitialChoice::Cosine { amplitude } => InitialSegment::cosine(amplitude),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub id: ModelId,
    pub a: f64,
    pub xi: InitialChoice,
    pub delay: Rational,
    pub horizon: Rational,
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock {
            id: ModelId::CubicGlobal,
            a: 0.25,
            xi: InitialChoice::Constant { value: 1.0 },
            delay: Rational::integer(1),
            horizon: Rational::integer(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeBlock {
    pub variant: SchemeVariant,
    pub theta: f64,
    /// Step of `simulate`.
    pub delta: Rational,
    /// Steps of the studies, coarsest first.
    pub levels: Vec<Rational>,
    pub guard_mode: GuardMode,
    pub solver_method: SolverMethod,
    pub tol_residual: f64,
    pub max_iters: usize,
    pub fd_jacobian_eps: f64,
}

impl Default for SchemeBlock {
    fn default() -> Self {
        let solver = ImplicitSolverPolicy::default();
        SchemeBlock {
            variant: SchemeVariant::TamedTheta,
            theta: 0.5,
            delta: Rational::dyadic(6),
            levels: Vec::new(),
            guard_mode: GuardMode::Strict,
            solver_method: solver.method,
            tol_residual: solver.tol_residual,
            max_iters: solver.max_iters,
            fd_jacobian_eps: solver.fd_jacobian_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TamingBlock {
    pub mode: TamingMode,
    pub alpha: f64,
    pub k5: f64,
    /// Cutoff radius; required by the improved scheme.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl Default for TamingBlock {
    fn default() -> Self {
        let t = TamingConfig::default();
        TamingBlock {
            mode: t.mode,
            alpha: t.alpha,
            k5: t.k5,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonBlock {
    pub xi: InitialChoice,
    pub delta: Rational,
}

impl Default for ComparisonBlock {
    fn default() -> Self {
        ComparisonBlock {
            xi: InitialChoice::Constant { value: 3.0 },
            delta: Rational::dyadic(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentBlock {
    pub p: f64,
    pub n_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_level: Option<Rational>,
    pub seed: u64,
    /// Path simulated by `simulate`.
    pub path_index: u64,
    /// Untamed explicit arm of the moment study.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonBlock>,
    /// Sampling box and sample count for `check-assumptions` and guard estimates.
    pub box_radius: f64,
    pub samples: usize,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        ExperimentBlock {
            p: 2.0,
            n_paths: 1000,
            ref_level: None,
            seed: DEFAULT_SEED,
            path_index: 0,
            comparison: None,
            box_radius: 5.0,
            samples: 1 << 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    pub precision: u32,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            directory: PathBuf::from("out"),
            precision: CSV_PRECISION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub scheme: SchemeBlock,
    pub taming: TamingBlock,
    pub experiment: ExperimentBlock,
    pub output: OutputBlock,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn solver(&self) -> ImplicitSolverPolicy {
        ImplicitSolverPolicy {
            method: self.scheme.solver_method,
            tol_residual: self.scheme.tol_residual,
            max_iters: self.scheme.max_iters,
            fd_jacobian_eps: self.scheme.fd_jacobian_eps,
        }
    }

    pub fn taming_config(&self) -> TamingConfig {
        TamingConfig {
            alpha: self.taming.alpha,
            k5: self.taming.k5,
            mode: self.taming.mode,
        }
    }

    fn cutoff(&self) -> Result<Option<CutoffConfig>> {
        match (self.scheme.variant, self.taming.radius) {
            (SchemeVariant::ImprovedTruncated, Some(r)) => CutoffConfig::new(r).map(Some),
            (SchemeVariant::ImprovedTruncated, None) => Err(Error::schema("taming.radius", "the improved scheme needs a cutoff radius")),
            _ => Ok(None),
        }
    }

    pub fn example(&self) -> Result<ExampleModel> {
        let mut m = make_example(self.model.id, self.model.a, self.model.xi.segment(), self.model.delay, self.model.horizon)?;
        m.constants.p = self.experiment.p;
        Ok(m)
    }

    pub fn scheme_config(&self, model: &ExampleModel, delta: Rational) -> Result<SchemeConfig> {
        Ok(SchemeConfig::new(&model.spec, self.scheme.variant, self.scheme.theta, delta, Some(self.taming_config()), self.cutoff()?)?
            .with_solver(self.solver())
            .with_guard_mode(self.scheme.guard_mode))
    }

    /// Every step the configuration integrates at.
    fn all_steps(&self) -> Vec<Rational> {
        let mut v = vec![self.scheme.delta];
        v.extend(self.scheme.levels.iter().copied());
        v.extend(self.experiment.ref_level);
        v
    }

    /// Field-level checks, reported with the offending key.
    fn validate_fields(&self) -> Result<()> {
        let s = &self.scheme;
        if !(0.0..=1.0).contains(&s.theta) {
            return Err(Error::schema("scheme.theta", format!("theta must lie in [0, 1], got {}", s.theta)));
        }
        if !(s.tol_residual > 0.0) {
            return Err(Error::schema("scheme.tol_residual", "must be positive"));
        }
        if s.max_iters == 0 {
            return Err(Error::schema("scheme.max_iters", "must be at least 1"));
        }
        if !(s.fd_jacobian_eps > 0.0) {
            return Err(Error::schema("scheme.fd_jacobian_eps", "must be positive"));
        }
        for (key, d) in std::iter::once(("scheme.delta", s.delta))
            .chain(s.levels.iter().map(|&d| ("scheme.levels", d)))
            .chain(self.experiment.ref_level.map(|d| ("experiment.ref_level", d)))
        {
            if !d.is_positive() || d >= Rational::integer(1) {
                return Err(Error::schema(key, format!("step must lie in (0, 1), got {d}")));
            }
        }
        let t = &self.taming;
        if !(t.alpha > 0.0 && t.alpha <= 0.5) {
            return Err(Error::schema("taming.alpha", format!("alpha must lie in (0, 1/2], got {}", t.alpha)));
        }
        if !(t.k5 >= 1.0) {
            return Err(Error::schema("taming.k5", format!("K5 must be at least 1, got {}", t.k5)));
        }
        if let Some(r) = t.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::schema("taming.radius", format!("radius must be positive, got {r}")));
            }
        }
        let e = &self.experiment;
        if !(e.p >= 2.0 && e.p.is_finite()) {
            return Err(Error::schema("experiment.p", format!("p must be at least 2, got {}", e.p)));
        }
        if e.n_paths == 0 {
            return Err(Error::schema("experiment.n_paths", "must be at least 1"));
        }
        if !(e.box_radius > 0.0 && e.box_radius.is_finite()) {
            return Err(Error::schema("experiment.box_radius", "must be positive"));
        }
        if e.samples == 0 {
            return Err(Error::schema("experiment.samples", "must be at least 1"));
        }
        if self.output.precision != CSV_PRECISION {
            return Err(Error::schema(
                "output.precision",
                format!("only {CSV_PRECISION} significant digits are supported, got {}", self.output.precision),
            ));
        }
        if self.model.id == ModelId::CubicGlobal && !(self.model.a != 0.0 && self.model.a.abs() < 0.5) {
            return Err(Error::schema("model.a", format!("needs 0 < |a| < 1/2, got {}", self.model.a)));
        }
        Ok(())
    }

    /// Sampled constants for the step-size guards.
    pub fn guard_estimates(&self, model: &ExampleModel) -> Result<GuardEstimates> {
        if self.scheme.theta == 0.0 {
            return Ok(GuardEstimates::default());
        }
        let delta = self.all_steps().into_iter().map(|d| d.to_f64()).fold(0.0, f64::max);
        let cutoff = self.cutoff()?;
        let radius = cutoff.map_or(self.experiment.box_radius, |c| c.outer_radius());
        let e = estimate_guard_constants(
            &model.spec.coefficients,
            &self.taming_config(),
            cutoff.as_ref(),
            delta,
            radius,
            self.experiment.samples,
            self.experiment.seed,
        )?;
        Ok(match self.scheme.variant {
            SchemeVariant::ImprovedTruncated => GuardEstimates {
                k3_tilde: None,
                m_bar: Some(e.m_bar),
            },
            _ => GuardEstimates {
                k3_tilde: Some(e.k3_tilde),
                m_bar: None,
            },
        })
    }

    /// Grid compatibility and guards at every configured step.
    pub fn guard_reports(&self, model: &ExampleModel, est: &GuardEstimates) -> Result<Vec<GuardReport>> {
        self.all_steps()
            .into_iter()
            .map(|d| check_guards(&self.scheme_config(model, d)?, &model.constants, est))
            .collect()
    }
}

/// Parses and validates a configuration document. Guards are checked
/// eagerly when the guard mode is strict.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg = parse_schema(text)?;
    cfg.validate_fields()?;
    let model = cfg.example()?;
    for d in cfg.all_steps() {
        cfg.scheme_config(&model, d)?;
    }
    if cfg.scheme.guard_mode == GuardMode::Strict {
        let est = cfg.guard_estimates(&model)?;
        cfg.guard_reports(&model, &est)?;
    }
    Ok(cfg)
}

fn parse_schema(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::schema("<document>", e.message().to_string()))?;
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        Error::schema(if path == "." { "<document>".to_string() } else { path }, e.into_inner().to_string())
    })
}

// ---------------------------------------------------------------- front end

#[derive(Debug, Parser)]
#[command(name = "nsdde", version, about = "Tamed theta schemes for neutral stochastic delay equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides `output.directory`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate one path at `scheme.delta` and write its trajectory.
    Simulate,
    /// Strong error per level against `experiment.ref_level`, with an order fit.
    Converge,
    /// Moments of the running maximum across `scheme.levels`.
    Moments,
    /// Within-step deviation across `scheme.levels`.
    Modulus,
    /// Sampled checks of the structural conditions.
    CheckAssumptions,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Converge => "converge",
            Command::Moments => "moments",
            Command::Modulus => "modulus",
            Command::CheckAssumptions => "check-assumptions",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Schema { .. } | Error::ParameterOutOfRange(_) => 2,
        Error::GuardViolation { .. } => 3,
        Error::SolverNonConvergence { .. } => 4,
        Error::GridMismatch(_) => 5,
        Error::InvalidExperiment(_) | Error::DegenerateRegression(_) => 6,
        Error::InvalidCoefficient { .. } | Error::Io(_) => 1,
    }
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    command: &'a str,
    library_version: &'a str,
    wall_time_seconds: f64,
    workers: Option<usize>,
    outputs: Vec<String>,
    guard_reports: &'a [GuardReport],
    config: &'a RunConfig,
}

fn study_context(cfg: &RunConfig, model: &ExampleModel, est: GuardEstimates, workers: Option<usize>) -> Result<StudyContext> {
    let first = cfg.scheme.levels.first().copied().unwrap_or(cfg.scheme.delta);
    Ok(StudyContext {
        model_name: model.id.name().to_string(),
        spec: model.spec.clone(),
        constants: model.constants.clone(),
        scheme: cfg.scheme_config(model, first)?,
        guard_estimates: est,
        p: cfg.experiment.p,
        n_paths: cfg.experiment.n_paths,
        seed: cfg.experiment.seed,
        workers,
    })
}

fn require_ref(cfg: &RunConfig) -> Result<Rational> {
    cfg.experiment
        .ref_level
        .ok_or_else(|| Error::schema("experiment.ref_level", "this command needs a reference step"))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, body)?;
    Ok(p)
}

fn assumptions_csv(cfg: &RunConfig, model: &ExampleModel) -> Result<String> {
    let vcfg = VerifyConfig {
        box_radius: cfg.experiment.box_radius,
        samples: cfg.experiment.samples,
        p: cfg.experiment.p,
        seed: cfg.experiment.seed,
        delta: cfg.scheme.delta.to_f64(),
        taming: cfg.taming_config(),
    };
    let mut s = String::from("assumption,status,estimated_constant,secondary_constant,samples,box_radius\n");
    for id in AssumptionId::ALL {
        let r = check_assumption(id, &model.spec.coefficients, &model.constants, &vcfg)?;
        let status = match r.status {
            crate::verify::CheckStatus::PassSampled => "pass-sampled",
            crate::verify::CheckStatus::ViolatedWitness => "violated-witness",
        };
        let secondary = r.secondary_constant.map_or(String::new(), |v| format!("{v:.16e}"));
        s += &format!(
            "{},{status},{:.16e},{secondary},{},{:.16e}\n",
            id.label(),
            r.estimated_constant,
            r.samples,
            r.box_radius
        );
    }
    Ok(s)
}

/// Runs `command` and returns the files written, excluding metadata.
fn dispatch(command: Command, cfg: &RunConfig, workers: Option<usize>, reports: &mut Vec<GuardReport>) -> Result<Vec<PathBuf>> {
    let model = cfg.example()?;
    let dir = cfg.output.directory.as_path();
    let est = if command == Command::CheckAssumptions {
        GuardEstimates::default()
    } else {
        cfg.guard_estimates(&model)?
    };
    match command {
        Command::Simulate => {
            let sc = cfg.scheme_config(&model, cfg.scheme.delta)?;
            reports.push(check_guards(&sc, &model.constants, &est)?);
            let ctx = StudyContext {
                scheme: sc.clone(),
                ..study_context(cfg, &model, est, workers)?
            };
            let noise = generate(cfg.experiment.seed, cfg.experiment.path_index, model.spec.noise_dim(), sc.delta, sc.n_steps)?;
            let path = Integrator::new(&model.spec, sc)?.run(&noise)?;
            let name = ctx.file_name(&format!("trajectory_path{}", cfg.experiment.path_index));
            Ok(vec![write(dir, &name, &path.to_csv_string())?])
        }
        Command::Converge => {
            let ctx = study_context(cfg, &model, est, workers)?;
            let s = run_convergence(&ctx, &cfg.scheme.levels, require_ref(cfg)?)?;
            reports.extend(s.guard_reports.iter().cloned());
            write_convergence(&ctx, &s, dir)
        }
        Command::Moments => {
            let ctx = study_context(cfg, &model, est, workers)?;
            let steps = if cfg.scheme.levels.is_empty() { vec![cfg.scheme.delta] } else { cfg.scheme.levels.clone() };
            let arm = match &cfg.experiment.comparison {
                Some(c) => Some(ComparisonArm {
                    spec: make_example(model.id, cfg.model.a, c.xi.segment(), cfg.model.delay, cfg.model.horizon)?.spec,
                    delta: c.delta,
                }),
                None => None,
            };
            let s = run_moment_study(&ctx, &steps, arm.as_ref())?;
            reports.extend(s.guard_reports.iter().cloned());
            write_moments(&ctx, &s, dir)
        }
        Command::Modulus => {
            let ctx = study_context(cfg, &model, est, workers)?;
            let s = run_modulus_study(&ctx, &cfg.scheme.levels, require_ref(cfg)?)?;
            reports.extend(s.guard_reports.iter().cloned());
            write_modulus(&ctx, &s, dir)
        }
        Command::CheckAssumptions => {
            let name = format!("assumptions_{}_seed{}.csv", model.id.name(), cfg.experiment.seed);
            let body = assumptions_csv(cfg, &model)?;
            print!("{body}");
            Ok(vec![write(dir, &name, &body)?])
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = parse_schema(&text)?;
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.clone();
    }
    if cli.workers == Some(0) {
        return Err(Error::schema("--workers", "must be at least 1"));
    }
    // re-validate with overrides applied
    parse_config(&cfg.to_toml())
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let start = Instant::now();
    let result = load(&cli).and_then(|cfg| {
        let mut reports = Vec::new();
        let outputs = dispatch(cli.command, &cfg, cli.workers, &mut reports)?;
        for r in reports.iter().filter(|r| !r.passed) {
            eprintln!(
                "warning: step {} violates a guard (delta1 = {}, delta2 = {}, delta3 = {})",
                r.delta, r.guards.delta1, r.guards.delta2, r.guards.delta3
            );
        }
        let meta = Metadata {
            command: cli.command.name(),
            library_version: env!("CARGO_PKG_VERSION"),
            wall_time_seconds: start.elapsed().as_secs_f64(),
            workers: cli.workers,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            guard_reports: &reports,
            config: &cfg,
        };
        let body = toml::to_string(&meta).map_err(|e| Error::Io(e.to_string()))?;
        let name = format!("metadata_{}_seed{}.toml", cli.command.name(), cfg.experiment.seed);
        write(&cfg.output.directory, &name, &body)?;
        for p in &outputs {
            println!("wrote {}", p.display());
        }
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
