use nonlocal_hlab::assembly::{assemble_residual, Density, Regularization};
use nonlocal_hlab::fields::{build_mesh, sample_coefficient, Coefficient, FracParams, ScalarField};
use nonlocal_hlab::lab::{
    alternator_values, energy_continuity_check, eventually_decreasing, g_equals_h_check,
    gen_non_converging_alternator, gen_product_checkerboard, run_h_experiment, run_necessity,
    weak_star_gap, CoefficientSequence, LabSettings, TestSuite,
};
use nonlocal_hlab::quadrature::{Discretization, QuadratureRule};
use nonlocal_hlab::solver::{default_tolerance, solve, solve_linear_p2, verify_energy_identity};

fn disc(n: usize, s: f64, p: f64) -> Discretization {
    Discretization::new(&build_mesh(n).unwrap(), FracParams::new(s, p).unwrap(), QuadratureRule::default()).unwrap()
}

fn bump() -> Density {
    Density::new("4x(1-x)", |x| 4.0 * x * (1.0 - x))
}

#[test]
fn descent_never_raises_the_energy() {
    for p in [2.5, 3.0, 4.0] {
        let d = disc(32, 0.3, p);
        let a = sample_coefficient(|x, y| 2.0 + (7.0 * x * y).sin(), 2.0, d.mesh(), 1.0, 3.0)
            .unwrap()
            .coefficient;
        let sol = solve(&a, &bump(), &d, &Regularization::default(), default_tolerance(p)).unwrap();
        let h = &sol.report.energy_history;
        assert!(h.len() > 2, "p = {p}: {h:?}");
        for w in h.windows(2) {
            assert!(w[1] <= w[0] + 1e-13 * w[0].abs(), "p = {p}: {h:?}");
        }
    }
}

#[test]
fn reflected_problem_has_reflected_state() {
    let d = disc(40, 0.6, 2.0);
    let a = sample_coefficient(
        |x, y| 2.0 + 0.8 * (2.0 * std::f64::consts::PI * (x + y)).cos(),
        2.0,
        d.mesh(),
        1.0,
        3.0,
    )
    .unwrap()
    .coefficient;
    let u = solve_linear_p2(&a, &bump(), &d).unwrap().state;
    let v = u.values();
    let n = v.len();
    for i in 0..n {
        assert!((v[i] - v[n - 1 - i]).abs() <= 1e-10 * u.max_abs(), "node {i}");
    }
}

#[test]
fn perturbed_solution_is_rejected() {
    let p = 3.0;
    let d = disc(32, 0.4, p);
    let a = Coefficient::constant(d.mesh(), 1.5).unwrap();
    let f = bump();
    let tol = default_tolerance(p);
    let sol = solve(&a, &f, &d, &Regularization::default(), tol).unwrap();
    assert!(verify_energy_identity(&sol.state, &a, &f, &d).unwrap().worst() <= 10.0 * tol);

    let bumped: Vec<f64> = sol.state.interior().iter().map(|x| 1.1 * x).collect();
    let bad = ScalarField::from_interior(d.mesh(), &bumped).unwrap();
    assert!(verify_energy_identity(&bad, &a, &f, &d).unwrap().worst() > 10.0 * tol);
    let r = assemble_residual(&a, &bad, &f, &d).unwrap();
    assert!(r.iter().any(|x| x.abs() > tol));
}

#[test]
fn oscillation_converges_weak_star() {
    let seq = CoefficientSequence::separable_oscillation(2.0, 1.0, 64).unwrap();
    let suite = TestSuite::default();
    let gaps: Vec<f64> = [1, 2, 4, 8, 16]
        .iter()
        .map(|&k| {
            let d = disc(seq.n_cells_for(k), 0.4, 2.0);
            let a_k = seq.coefficient(k, d.mesh()).unwrap();
            weak_star_gap(&a_k, &seq.claimed_limit(d.mesh()).unwrap(), &suite, &d).unwrap()
        })
        .collect();
    assert!(eventually_decreasing(&gaps), "{gaps:?}");
}

#[test]
fn checkerboard_has_the_arithmetic_mean() {
    for k in [1, 2, 3, 4, 8] {
        let mesh = build_mesh(16 * k).unwrap();
        let a = gen_product_checkerboard(k, 1.0, 3.0, &mesh).unwrap();
        let mean = a.pair_values().iter().sum::<f64>() / a.pair_values().len() as f64;
        assert!((mean - 2.0).abs() <= 1e-14, "k = {k}: {mean}");
    }
}

#[test]
fn alternator_states_scale_with_the_coefficient() {
    let settings = LabSettings::new(FracParams::new(0.4, 2.0).unwrap(), default_tolerance(2.0));
    let report = run_necessity(64, &[1, 2, 3, 4], &settings).unwrap();
    let (odd, even) = alternator_values();
    for row in &report.rows {
        let ratio = row.odd_norm / row.even_norm;
        assert!((ratio - even / odd).abs() <= 1e-10, "{}: {ratio}", row.load);
        assert!(row.ratio >= report.threshold);
    }
    assert!(report.no_h_limit);
}

#[test]
fn alternator_defeats_the_continuity_checks() {
    let mut settings = LabSettings::new(FracParams::new(0.4, 2.0).unwrap(), default_tolerance(2.0));
    settings.loads.truncate(1);
    let mesh = build_mesh(32).unwrap();
    let (odd, even) = alternator_values();
    let seq = gen_non_converging_alternator(&mesh).with_constant_limit(0.5 * (odd + even)).unwrap();
    let report = run_h_experiment(&seq, &[1, 2, 3, 4, 5, 6], &settings).unwrap();
    assert!(!eventually_decreasing(&report.column(|r| r.state_weak_gap)));
    assert!(g_equals_h_check(&report, 10.0));
    assert!(!energy_continuity_check(&report));
}
