//! One line per acceptance criterion; exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use nonlocal_hlab::assembly::{assemble_energy, assemble_residual, Density, Regularization};
use nonlocal_hlab::calculus::{duality_pairing, flux_envelope_violation, nonlocal_divergence};
use nonlocal_hlab::fields::{build_mesh, sample_coefficient, Coefficient, FracParams, ProductField, ScalarField};
use nonlocal_hlab::io::REPORT_FILE;
use nonlocal_hlab::lab::{
    run_checkerboard_contrast, run_h_experiment, run_necessity, CoefficientSequence, HReport, LabSettings,
    SufficiencyVerdict, ENVELOPE_ULPS,
};
use nonlocal_hlab::quadrature::{Discretization, QuadratureRule};
use nonlocal_hlab::solver::{default_tolerance, solve, solve_linear_p2, verify_energy_identity, Solution};

const SEED: u64 = 0x5eed_2024;

fn disc(n: usize, s: f64, p: f64) -> Discretization {
    Discretization::new(&build_mesh(n).unwrap(), FracParams::new(s, p).unwrap(), QuadratureRule::default()).unwrap()
}

fn max_rel(u: &[f64], v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    u.iter().zip(v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

fn random_state(rng: &mut StdRng, d: &Discretization) -> ScalarField {
    let v: Vec<f64> = (0..d.mesh().n_interior()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ScalarField::from_interior(d.mesh(), &v).unwrap()
}

/// Every solve made here, for the identity and envelope criteria.
#[derive(Default)]
struct Ledger {
    identity: f64,
    envelope: f64,
    solves: usize,
}

impl Ledger {
    fn record(&mut self, sol: &Solution, a: &Coefficient, f: &Density, d: &Discretization) {
        let tol = default_tolerance(d.params().p);
        let id = verify_energy_identity(&sol.state, a, f, d).unwrap().worst() / tol;
        let env = flux_envelope_violation(&sol.flux, &sol.state, a.lower(), a.upper(), d, ENVELOPE_ULPS).unwrap();
        self.identity = self.identity.max(id);
        self.envelope = self.envelope.max(env);
        self.solves += 1;
    }

    fn record_report(&mut self, r: &HReport) {
        self.identity = self.identity.max(r.max_identity_mismatch() / r.tol);
        self.envelope = self.envelope.max(r.max_envelope_violation());
        self.solves += r.rows.len() * r.loads.len() * 2;
    }
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn oracle_equivalence(ledger: &mut Ledger) -> Outcome {
    let d = disc(128, 0.4, 2.0);
    let a = Coefficient::constant(d.mesh(), 1.0).unwrap();
    let f = Density::constant(1.0);
    let start = Instant::now();
    let sol = solve(&a, &f, &d, &Regularization::default(), default_tolerance(2.0)).unwrap();
    let oracle = solve_linear_p2(&a, &f, &d).unwrap();
    let secs = start.elapsed().as_secs_f64();
    ledger.record(&sol, &a, &f, &d);
    let err = max_rel(sol.state.values(), oracle.state.values());
    Outcome {
        passed: err <= 1e-8 && secs <= 10.0,
        detail: format!("max rel diff {err:.2e} (<= 1e-8), {secs:.2} s (<= 10 s)"),
    }
}

fn integration_by_parts(rng: &mut StdRng) -> Outcome {
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let p = [1.5, 2.0, 3.0][case % 3];
        let s = rng.random_range(0.1..0.9);
        let d = disc(64, s, p);
        let phi: Vec<f64> = (0..d.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phi = ProductField::new(&d, phi).unwrap();
        let v = random_state(rng, &d);
        let lhs = nonlocal_divergence(&phi, &v, &d).unwrap();
        let rhs = duality_pairing(&phi, &v, &d).unwrap();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    Outcome {
        passed: worst <= 1e-12,
        detail: format!("20 pairs, worst rel mismatch {worst:.2e} (<= 1e-12)"),
    }
}

fn gradient_consistency(rng: &mut StdRng) -> Outcome {
    let delta = 1e-5;
    let mut worst: f64 = 0.0;
    for p in [1.5, 2.0, 3.0] {
        let d = disc(32, 0.4, p);
        let a = sample_coefficient(|x, y| 2.0 + (5.0 * x + 3.0 * y).sin() * (3.0 * x + 5.0 * y).sin(), 2.0, d.mesh(), 1.0, 3.0)
            .unwrap()
            .coefficient;
        let f = Density::new("sin(pi x)", |x| (std::f64::consts::PI * x).sin());
        for _ in 0..10 {
            let u = random_state(rng, &d);
            let r = assemble_residual(&a, &u, &f, &d).unwrap();
            let scale = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for node in 0..r.len() {
                let at = |h: f64| {
                    let mut w = u.interior().to_vec();
                    w[node] += h;
                    assemble_energy(&a, &ScalarField::from_interior(d.mesh(), &w).unwrap(), &f, &d).unwrap()
                };
                let fd = (at(delta) - at(-delta)) / (2.0 * delta);
                worst = worst.max((fd - r[node]).abs() / scale);
            }
        }
    }
    Outcome {
        passed: worst <= 1e-6,
        detail: format!("30 states, worst rel error {worst:.2e} (<= 1e-6)"),
    }
}

fn homogeneity(ledger: &mut Ledger) -> Outcome {
    let mut worst: f64 = 0.0;
    for p in [2.0, 3.0] {
        let d = disc(64, 0.4, p);
        let a = sample_coefficient(|x, y| 2.0 + 0.9 * (9.0 * x).cos() * (9.0 * y).cos(), 2.0, d.mesh(), 1.0, 3.0)
            .unwrap()
            .coefficient;
        let f = Density::new("4x(1-x)", |x| 4.0 * x * (1.0 - x));
        let reg = Regularization::default();
        let tol = default_tolerance(p);
        let base = solve(&a, &f, &d, &reg, tol).unwrap();
        ledger.record(&base, &a, &f, &d);
        for c in [0.5, 2.0] {
            let ca = a.scaled(c).unwrap();
            let sol = solve(&ca, &f, &d, &reg, tol).unwrap();
            ledger.record(&sol, &ca, &f, &d);
            let expect = base.state.scaled(c.powf(-1.0 / (p - 1.0)));
            worst = worst.max(max_rel(sol.state.values(), expect.values()));
        }
    }
    Outcome {
        passed: worst <= 1e-8,
        detail: format!("worst rel diff {worst:.2e} (<= 1e-8)"),
    }
}

fn sufficiency(ledger: &mut Ledger) -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut passed = true;
    for p in [2.0, 3.0] {
        let seq = CoefficientSequence::separable_oscillation(2.0, 1.0, 64).unwrap();
        let settings = LabSettings::new(FracParams::new(0.4, p).unwrap(), default_tolerance(p));
        let report = run_h_experiment(&seq, &[1, 2, 4, 8, 16], &settings).unwrap();
        ledger.record_report(&report);
        let v = SufficiencyVerdict::of(&report);
        let ratio = |c: Vec<f64>| c[c.len() - 1] / c[0];
        parts.push(format!(
            "p={p}: state {:.3} flux {:.3} energy {:.3} divcurl {:.3}",
            ratio(report.column(|r| r.state_strong_gap)),
            ratio(report.column(|r| r.flux_weak_gap)),
            ratio(report.column(|r| r.energy_gap)),
            ratio(report.column(|r| r.div_curl_gap)),
        ));
        passed &= v.passed();
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        passed: passed && secs <= 600.0,
        detail: format!("final/initial {}; {secs:.1} s (<= 600 s)", parts.join(", ")),
    }
}

fn contrast() -> Outcome {
    let settings = LabSettings::new(FracParams::new(0.4, 2.0).unwrap(), default_tolerance(2.0));
    let report = run_checkerboard_contrast(1.0, 3.0, 16, 64, &settings).unwrap();
    let arith = report.rows.iter().map(|r| r.arithmetic_ratio).fold(0.0, f64::max);
    let harm = report.rows.iter().map(|r| r.harmonic_ratio).fold(f64::INFINITY, f64::min);
    Outcome {
        passed: report.passed && arith <= 0.1 && harm >= 0.5,
        detail: format!("to arithmetic {arith:.3} (<= 0.1), to harmonic {harm:.3} (>= 0.5)"),
    }
}

fn necessity() -> Outcome {
    let settings = LabSettings::new(FracParams::new(0.4, 2.0).unwrap(), default_tolerance(2.0));
    let report = run_necessity(64, &[1, 2, 3, 4], &settings).unwrap();
    let ratio = report.rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Outcome {
        passed: ratio >= 0.1 && report.no_h_limit,
        detail: format!("min odd/even separation {ratio:.3} (>= 0.1), no H-limit flagged: {}", report.no_h_limit),
    }
}

fn run_hlab(config: &Path, out: &Path, threads: usize) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_hlab"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--threads", &threads.to_string()])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out.join(REPORT_FILE)).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("h.toml");
    std::fs::write(&config, "experiment = \"h-sufficiency\"\n").unwrap();
    let one = run_hlab(&config, &dir.path().join("t1"), 1);
    let eight = run_hlab(&config, &dir.path().join("t8"), 8);
    Outcome {
        passed: one == eight && !one.is_empty(),
        detail: format!("{} bytes, identical: {}", one.len(), one == eight),
    }
}

fn main() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut rng = StdRng::seed_from_u64(SEED);
    let mut ledger = Ledger::default();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();

    pool.install(|| {
        results.push((1, "oracle equivalence at p=2", oracle_equivalence(&mut ledger)));
        results.push((2, "integration by parts", integration_by_parts(&mut rng)));
        results.push((3, "gradient consistency", gradient_consistency(&mut rng)));
        results.push((5, "homogeneity", homogeneity(&mut ledger)));
        results.push((6, "H-sufficiency trend", sufficiency(&mut ledger)));
        results.push((7, "arithmetic vs harmonic contrast", contrast()));
        results.push((8, "H-necessity", necessity()));
    });
    results.push((
        4,
        "energy identities",
        Outcome {
            passed: ledger.identity <= 10.0,
            detail: format!("{} solves, worst mismatch {:.2} tol (<= 10 tol)", ledger.solves, ledger.identity),
        },
    ));
    results.push((
        9,
        "flux envelope",
        Outcome {
            passed: ledger.envelope == 0.0,
            detail: format!("{} solves, worst violation {:.2e} beyond {ENVELOPE_ULPS} ulps", ledger.solves, ledger.envelope),
        },
    ));
    results.push((10, "determinism across thread counts", determinism()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, o) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} criterion {n:>2} {name}: {}", o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
