//! Orchestration of the named experiments and the exit-status contract.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::assembly::{load_vector, Density};
use crate::calculus::{
    compute_flux, duality_pairing, flux_envelope_violation, gagliardo_seminorm, nonlocal_divergence,
    nonlocal_gradient_at, product_integral,
};
use crate::error::LabError;
use crate::fields::{build_mesh, interpolate_state, Coefficient, FracParams, ProductField, ScalarField};
use crate::lab::{
    self, g_equals_h_check, run_checkerboard_contrast, run_h_experiment, run_necessity, uniqueness_check,
    CoefficientSequence, HReport, SufficiencyVerdict, ENVELOPE_ULPS,
};
use crate::quadrature::{Discretization, QuadratureRule};
use crate::solver::{solve, solve_linear_p2, verify_energy_identity};

use super::config::{ConfigError, ExperimentConfig, ExperimentKind};
use super::report::{emit_checks, emit_manifest, emit_report, Check, Manifest};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Flux lag allowed by the G = H check, relative to the states.
pub const G_EQUALS_H_FACTOR: f64 = 10.0;
/// Energy identities must hold to this multiple of the solver tolerance.
pub const IDENTITY_FACTOR: f64 = 10.0;

/// Reference value of `|hat|_{0.4,2}` for the hat on two cells.
pub const HAT_SEMINORM_S04_P2: f64 = 2.214359445513463;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failure: {0}")]
    Solver(LabError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Solver(_) => EXIT_SOLVER,
            RunError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<LabError> for RunError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::InvalidArgument(message) => RunError::Config(ConfigError {
                key: "experiment".into(),
                message,
            }),
            other => RunError::Solver(other),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(ExperimentConfig::from_toml(&text)?)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub experiment: ExperimentKind,
    pub checks: Vec<Check>,
    pub report: Option<HReport>,
    pub details: Option<serde_json::Value>,
    pub files: Vec<PathBuf>,
    pub wall_time_seconds: f64,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_PASS
        } else {
            EXIT_ASSERTION
        }
    }
}

struct Computed {
    checks: Vec<Check>,
    report: Option<HReport>,
    details: Option<serde_json::Value>,
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ConfigError {
            key: "threads".into(),
            message: e.to_string(),
        })?;
    Ok(pool.install(job))
}

/// Runs the configured experiment without writing anything.
pub fn execute(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let start = Instant::now();
    let computed = with_pool(config.threads, || compute(config))??;
    Ok(RunOutcome {
        experiment: config.experiment,
        checks: computed.checks,
        report: computed.report,
        details: computed.details,
        files: Vec::new(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the configured experiment and writes its report, checks, manifest
/// and resolved config under `config.output_path`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let mut outcome = execute(config)?;
    let mut resolved = config.clone();
    resolved.tol = Some(config.tolerance());
    let config = &resolved;
    let dir = config.output_path.as_path();
    let mut files = Vec::new();
    if let Some(report) = &outcome.report {
        files.push(emit_report(report, dir).map_err(io_err(dir))?);
    }
    files.push(emit_checks(&outcome.checks, dir).map_err(io_err(dir))?);
    let names: Vec<String> = files
        .iter()
        .chain([dir.join(super::report::CONFIG_FILE)].iter())
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let manifest = Manifest {
        manifest_version: 1,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: config.experiment.name(),
        config,
        wall_time_seconds: outcome.wall_time_seconds,
        threads: if config.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            config.threads
        },
        passed: outcome.passed(),
        checks: &outcome.checks,
        files: names,
        details: outcome.details.clone(),
    };
    files.push(emit_manifest(&manifest, dir).map_err(io_err(dir))?);
    files.push(dir.join(super::report::CONFIG_FILE));
    outcome.files = files;
    Ok(outcome)
}

fn compute(config: &ExperimentConfig) -> Result<Computed, RunError> {
    match config.experiment {
        ExperimentKind::HSufficiency => h_sufficiency(config),
        ExperimentKind::HNecessity => h_necessity(config),
        ExperimentKind::CheckerboardContrast => checkerboard(config),
        ExperimentKind::CalculusSelftest => calculus_selftest(config),
        ExperimentKind::SolverSelftest => solver_selftest(config),
    }
}

fn report_checks(report: &HReport, tol: f64, checks: &mut Vec<Check>) {
    checks.push(Check::at_most(
        "flux-envelope",
        "all solves",
        report.max_envelope_violation(),
        0.0,
    ));
    checks.push(Check::at_most(
        "energy-identity",
        "all solves",
        report.max_identity_mismatch(),
        IDENTITY_FACTOR * tol,
    ));
}

fn h_sufficiency(config: &ExperimentConfig) -> Result<Computed, RunError> {
    let seq = CoefficientSequence::separable_oscillation(config.mean, config.amplitude, config.n_cells_base)?;
    let report = run_h_experiment(&seq, &config.k_list, &config.settings())?;
    let v = SufficiencyVerdict::of(&report);
    let mut checks = vec![
        Check::flag("trend", "stateStrongGap", v.state_strong),
        Check::flag("trend", "fluxWeakGap", v.flux_weak),
        Check::flag("trend", "energyGap", v.energy),
        Check::flag("trend", "divCurlGap", v.div_curl),
        Check::flag("g-equals-h", format!("factor {G_EQUALS_H_FACTOR}"), g_equals_h_check(&report, G_EQUALS_H_FACTOR)),
    ];
    report_checks(&report, config.tolerance(), &mut checks);
    Ok(Computed {
        checks,
        details: serde_json::to_value(v).ok(),
        report: Some(report),
    })
}

fn h_necessity(config: &ExperimentConfig) -> Result<Computed, RunError> {
    let settings = config.settings();
    let mesh = build_mesh(config.n_cells_base)?;
    let (odd, even) = lab::alternator_values();
    let seq = lab::gen_non_converging_alternator(&mesh).with_constant_limit(0.5 * (odd + even))?;
    let report = run_h_experiment(&seq, &config.k_list, &settings)?;
    let mut k_list = config.k_list.clone();
    if !k_list.iter().any(|k| k % 2 == 1) {
        k_list.push(1);
    }
    if !k_list.iter().any(|k| k % 2 == 0) {
        k_list.push(2);
    }
    let necessity = run_necessity(config.n_cells_base, &k_list, &settings)?;
    let mut checks: Vec<Check> = necessity
        .rows
        .iter()
        .map(|r| Check::at_least("odd-even-separation", &r.load, r.ratio, necessity.threshold))
        .collect();
    checks.push(Check::flag("no-h-limit", "alternator", necessity.no_h_limit));
    checks.push(Check::flag(
        "energy-not-continuous",
        "alternator",
        config.k_list.len() < 2 || !lab::energy_continuity_check(&report),
    ));
    report_checks(&report, config.tolerance(), &mut checks);
    Ok(Computed {
        checks,
        details: serde_json::to_value(&necessity).ok(),
        report: Some(report),
    })
}

fn checkerboard(config: &ExperimentConfig) -> Result<Computed, RunError> {
    let settings = config.settings();
    let k_max = *config.k_list.iter().max().unwrap_or(&1);
    let contrast = run_checkerboard_contrast(config.alpha, config.beta, k_max, config.n_cells_base, &settings)?;
    let arith = 0.5 * (config.alpha + config.beta);
    let harm = 2.0 * config.alpha * config.beta / (config.alpha + config.beta);
    let base = CoefficientSequence::product_checkerboard(config.alpha, config.beta, config.n_cells_base)?;
    let to_arith = run_h_experiment(&base.clone().with_constant_limit(arith)?, &config.k_list, &settings)?;
    let to_harm = run_h_experiment(&base.with_constant_limit(harm)?, &config.k_list, &settings)?;
    let mut checks = Vec::new();
    for r in &contrast.rows {
        checks.push(Check::at_most("arithmetic-match", &r.load, r.arithmetic_ratio, contrast.arithmetic_bound));
        checks.push(Check::at_least("harmonic-separation", &r.load, r.harmonic_ratio, contrast.harmonic_bound));
    }
    if config.alpha < config.beta {
        checks.push(Check::flag("unique-limit", "arithmetic vs harmonic", uniqueness_check(&to_arith, &to_harm)));
    }
    report_checks(&to_arith, config.tolerance(), &mut checks);
    Ok(Computed {
        checks,
        details: serde_json::to_value(&contrast).ok(),
        report: Some(to_arith),
    })
}

fn discretization(config: &ExperimentConfig, n: usize, params: FracParams) -> Result<Discretization, RunError> {
    Ok(Discretization::new(&build_mesh(n)?, params, config.rule())?)
}

/// `|<d phi, v> - int int phi D v|` relative to the Hoelder bound
/// `|phi|_{L^p'} |v|_{s,p}` of the pairing.
pub fn ibp_mismatch(phi: &ProductField, v: &ScalarField, disc: &Discretization) -> crate::Result<f64> {
    let div = nonlocal_divergence(phi, v, disc)?;
    let pair = duality_pairing(phi, v, disc)?;
    let pp = disc.params().p_prime;
    let abs_pow = ProductField::new(disc, phi.values().iter().map(|x| x.abs().powf(pp)).collect())?;
    let bound = product_integral(&abs_pow, disc, |_, _| 1.0)?.powf(1.0 / pp) * gagliardo_seminorm(v, disc)?;
    let diff = (div - pair).abs();
    Ok(if diff == 0.0 { 0.0 } else { diff / bound })
}

/// Integration by parts, antisymmetry of the gradient and the seminorm of the hat.
fn calculus_selftest(config: &ExperimentConfig) -> Result<Computed, RunError> {
    let disc = discretization(config, config.n_cells_base, config.params())?;
    let mut checks = Vec::new();
    let pi = std::f64::consts::PI;
    for case in 0..20 {
        let (m, j) = ((case % 5 + 1) as f64, (case / 5 + 1) as f64);
        let phi = ProductField::sample(&disc, |x, y| (m * pi * x + 0.3).cos() * (j * pi * y + 0.7).sin() + x * y)?;
        let v = interpolate_state(|x| (j * pi * x).sin() + m * x * (1.0 - x), disc.mesh())?;
        let rel = ibp_mismatch(&phi, &v, &disc)?;
        checks.push(Check::at_most("integration-by-parts", format!("m={m} j={j}"), rel, 1e-12));
    }
    let u = interpolate_state(|x| x * (1.0 - x) * (3.0 * x).cos(), disc.mesh())?;
    let params = disc.params();
    let mut worst: f64 = 0.0;
    for (x, y) in [(0.1, 0.7), (0.33, 0.34), (0.5, 1.5), (-0.2, 0.9)] {
        let a = nonlocal_gradient_at(&u, x, y, params)?;
        let b = nonlocal_gradient_at(&u, y, x, params)?;
        worst = worst.max((a + b).abs());
    }
    checks.push(Check::at_most("gradient-antisymmetry", "4 pairs", worst, 0.0));
    let hat_disc = Discretization::new(&build_mesh(2)?, FracParams::new(0.4, 2.0)?, QuadratureRule::default())?;
    let hat = interpolate_state(|x| 1.0 - 2.0 * (x - 0.5).abs(), hat_disc.mesh())?;
    let semi = gagliardo_seminorm(&hat, &hat_disc)?;
    checks.push(Check::at_most(
        "hat-seminorm",
        "s=0.4 p=2 nCells=2",
        (semi - HAT_SEMINORM_S04_P2).abs() / HAT_SEMINORM_S04_P2,
        5e-4,
    ));
    Ok(Computed {
        checks,
        report: None,
        details: None,
    })
}

/// Linear oracle, energy identities, flux divergence, homogeneity and the flux envelope.
fn solver_selftest(config: &ExperimentConfig) -> Result<Computed, RunError> {
    let settings = config.settings();
    let tol = settings.tol;
    let n = config.n_cells_base;
    let mut checks = Vec::new();

    let lin_disc = discretization(config, n, FracParams::new(config.s, 2.0)?)?;
    let one = Coefficient::constant(lin_disc.mesh(), 1.0)?;
    let f1 = Density::constant(1.0);
    let newton = solve(&one, &f1, &lin_disc, &settings.reg, crate::solver::default_tolerance(2.0))?;
    let direct = solve_linear_p2(&one, &f1, &lin_disc)?;
    checks.push(Check::at_most(
        "linear-oracle",
        format!("nCells={n}"),
        max_rel_diff(newton.state.values(), direct.state.values()),
        1e-8,
    ));

    let disc = discretization(config, n, settings.params)?;
    let a = lab::gen_separable_oscillation(2, config.mean, config.amplitude, disc.mesh())?;
    for f in &settings.loads {
        let sol = solve(&a, f, &disc, &settings.reg, tol)?;
        let id = verify_energy_identity(&sol.state, &a, f, &disc)?;
        checks.push(Check::at_most("energy-identity", f.name(), id.energy_mismatch, IDENTITY_FACTOR * tol));
        checks.push(Check::at_most("functional-identity", f.name(), id.functional_mismatch, IDENTITY_FACTOR * tol));
        checks.push(Check::at_most(
            "flux-envelope",
            f.name(),
            flux_envelope_violation(&sol.flux, &sol.state, a.lower(), a.upper(), &disc, ENVELOPE_ULPS)?,
            0.0,
        ));
        let load_norm = load_vector(f, &disc).iter().fold(0.0f64, |m, b| m.max(b.abs()));
        for j in 1..=settings.suite.n_states {
            let v = interpolate_state(|x| settings.suite.state_test(j, x), disc.mesh())?;
            let lhs = nonlocal_divergence(&sol.flux, &v, &disc)?;
            let rhs = 2.0 * crate::assembly::load_pairing(f, &v, &disc)?;
            let l1: f64 = v.interior().iter().map(|x| x.abs()).sum();
            checks.push(Check::at_most(
                "flux-divergence",
                format!("{} j={j}", f.name()),
                (lhs - rhs).abs() / (2.0 * load_norm * l1),
                IDENTITY_FACTOR * tol,
            ));
        }
    }

    let f = &settings.loads[0];
    let base = solve(&a, f, &disc, &settings.reg, tol)?;
    for c in [0.5, 2.0] {
        let scaled = solve(&a.scaled(c)?, f, &disc, &settings.reg, tol)?;
        let factor = c.powf(-1.0 / (settings.params.p - 1.0));
        let expect: Vec<f64> = base.state.values().iter().map(|u| factor * u).collect();
        checks.push(Check::at_most(
            "homogeneity",
            format!("c={c}"),
            max_rel_diff(scaled.state.values(), &expect),
            1e-8,
        ));
        let q = compute_flux(&a.scaled(c)?, &base.state.scaled(factor), &disc)?;
        checks.push(Check::at_most(
            "flux-invariance",
            format!("c={c}"),
            max_rel_diff(q.values(), base.flux.values()),
            1e-12,
        ));
    }
    Ok(Computed {
        checks,
        report: None,
        details: None,
    })
}

/// `max |a - b| / max |b|` (0 when both vanish).
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
