use proptest::prelude::*;

use nonlocal_hlab::assembly::{assemble_energy, assemble_residual, Density, Regularization};
use nonlocal_hlab::calculus::{
    compute_flux, duality_pairing, flux_envelope_violation, gagliardo_power, gagliardo_seminorm,
    nonlocal_divergence,
};
use nonlocal_hlab::fields::{build_mesh, sample_coefficient, Coefficient, FracParams, ProductField, ScalarField};
use nonlocal_hlab::io::ibp_mismatch;
use nonlocal_hlab::quadrature::{Discretization, QuadratureRule};
use nonlocal_hlab::solver::{solve, solve_with_initial};

fn disc(n: usize, s: f64, p: f64) -> Discretization {
    Discretization::new(&build_mesh(n).unwrap(), FracParams::new(s, p).unwrap(), QuadratureRule::default()).unwrap()
}

fn state(d: &Discretization, interior: &[f64]) -> ScalarField {
    ScalarField::from_interior(d.mesh(), interior).unwrap()
}

/// Random symmetric coefficient in `[1, 3]` built from a few Fourier modes.
fn coefficient(d: &Discretization, modes: &[f64]) -> Coefficient {
    let m = modes.to_vec();
    sample_coefficient(
        move |x, y| {
            2.0 + m
                .iter()
                .enumerate()
                .map(|(i, c)| c * ((i + 1) as f64 * 3.0 * x).sin() * ((i + 1) as f64 * 2.0 * y).cos())
                .sum::<f64>()
        },
        2.0,
        d.mesh(),
        1.0,
        3.0,
    )
    .unwrap()
    .coefficient
}

fn p_choice() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.5), Just(2.0), Just(3.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn integration_by_parts_is_exact(
        s in 0.1f64..0.9,
        p in p_choice(),
        c in proptest::collection::vec(-1.0f64..1.0, 4),
        v in proptest::collection::vec(-1.0f64..1.0, 7),
    ) {
        let d = disc(8, s, p);
        let phi = ProductField::sample(&d, |x, y| c[0] + c[1] * x + c[2] * (5.0 * y).sin() + c[3] * x * y * y).unwrap();
        let v = state(&d, &v);
        prop_assert!(ibp_mismatch(&phi, &v, &d).unwrap() <= 1e-12);
    }

    #[test]
    fn residual_is_gradient_of_energy(
        p in p_choice(),
        u in proptest::collection::vec(-1.0f64..1.0, 7),
        modes in proptest::collection::vec(-0.3f64..0.3, 3),
        node in 0usize..7,
    ) {
        let d = disc(8, 0.4, p);
        let a = coefficient(&d, &modes);
        let f = Density::new("sine", |x| (3.0 * x).sin());
        let base = state(&d, &u);
        let r = assemble_residual(&a, &base, &f, &d).unwrap();
        let delta = 1e-5;
        let shifted = |h: f64| {
            let mut w = u.clone();
            w[node] += h;
            assemble_energy(&a, &state(&d, &w), &f, &d).unwrap()
        };
        let fd = (shifted(delta) - shifted(-delta)) / (2.0 * delta);
        let scale = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!((fd - r[node]).abs() <= 1e-6 * scale, "fd {} vs {}", fd, r[node]);
    }

    #[test]
    fn energy_is_convex_along_segments(
        p in p_choice(),
        u in proptest::collection::vec(-1.0f64..1.0, 7),
        v in proptest::collection::vec(-1.0f64..1.0, 7),
    ) {
        let d = disc(8, 0.3, p);
        let a = Coefficient::constant(d.mesh(), 1.7).unwrap();
        let f = Density::constant(1.0);
        let at = |t: f64| {
            let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x + t * y).collect();
            assemble_energy(&a, &state(&d, &w), &f, &d).unwrap()
        };
        let h = 0.25;
        for i in -4..4 {
            let t = i as f64 * h;
            let second = at(t + h) - 2.0 * at(t) + at(t - h);
            prop_assert!(second >= -1e-10 * at(t).abs().max(1.0));
        }
    }

    #[test]
    fn energy_grows_along_rays(p in p_choice(), v in proptest::collection::vec(-1.0f64..1.0, 7)) {
        prop_assume!(v.iter().any(|x| x.abs() > 0.1));
        let d = disc(8, 0.4, p);
        let a = Coefficient::constant(d.mesh(), 1.0).unwrap();
        let f = Density::constant(1.0);
        let energies: Vec<f64> = [10.0, 20.0, 40.0, 80.0]
            .iter()
            .map(|&t| assemble_energy(&a, &state(&d, &v).scaled(t), &f, &d).unwrap())
            .collect();
        prop_assert!(energies.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn energy_respects_class_bounds(
        p in p_choice(),
        u in proptest::collection::vec(-1.0f64..1.0, 7),
        modes in proptest::collection::vec(-0.5f64..0.5, 3),
    ) {
        let d = disc(8, 0.5, p);
        let a = coefficient(&d, &modes);
        let zero = Density::constant(0.0);
        let u = state(&d, &u);
        let ea = assemble_energy(&a, &u, &zero, &d).unwrap();
        let e1 = assemble_energy(&Coefficient::constant(d.mesh(), 1.0).unwrap(), &u, &zero, &d).unwrap();
        prop_assert!(a.lower() * e1 <= ea * (1.0 + 1e-14));
        prop_assert!(ea <= a.upper() * e1 * (1.0 + 1e-14));
    }

    #[test]
    fn flux_envelope_holds_pointwise(
        p in p_choice(),
        u in proptest::collection::vec(-1.0f64..1.0, 7),
        modes in proptest::collection::vec(-0.5f64..0.5, 3),
    ) {
        let d = disc(8, 0.4, p);
        let a = coefficient(&d, &modes);
        let u = state(&d, &u);
        let q = compute_flux(&a, &u, &d).unwrap();
        prop_assert_eq!(flux_envelope_violation(&q, &u, 1.0, 3.0, &d, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn seminorm_is_absolutely_homogeneous(
        s in 0.1f64..0.9,
        p in p_choice(),
        u in proptest::collection::vec(-1.0f64..1.0, 7),
        c in -5.0f64..5.0,
    ) {
        let d = disc(8, s, p);
        let u = state(&d, &u);
        let a = gagliardo_seminorm(&u, &d).unwrap();
        let b = gagliardo_seminorm(&u.scaled(c), &d).unwrap();
        prop_assert!((b - c.abs() * a).abs() <= 1e-12 * b.max(1e-300));
    }

    #[test]
    fn flux_against_state_is_the_power(
        p in p_choice(),
        u in proptest::collection::vec(-1.0f64..1.0, 7),
    ) {
                let d = disc(8, 0.4, p);
        let u = state(&d, &u);
        let q = compute_flux(&Coefficient::constant(d.mesh(), 1.0).unwrap(), &u, &d).unwrap();
        let power = gagliardo_power(&u, &d).unwrap();
        let pairing = duality_pairing(&q, &u, &d).unwrap();
        let div = nonlocal_divergence(&q, &u, &d).unwrap();
        prop_assert!((pairing - power).abs() <= 1e-12 * power);
        prop_assert!((div - pairing).abs() <= 1e-12 * power);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn minimizer_does_not_depend_on_initial_guess(
        p in p_choice(),
        init in proptest::collection::vec(-2.0f64..2.0, 15),
        modes in proptest::collection::vec(-0.5f64..0.5, 3),
    ) {
        let d = disc(16, 0.4, p);
        let a = coefficient(&d, &modes);
        let f = Density::new("sine", |x| (std::f64::consts::PI * x).sin());
        let tol = nonlocal_hlab::solver::default_tolerance(p);
        let reg = Regularization::default();
        let from_zero = solve(&a, &f, &d, &reg, tol).unwrap();
        let from_random = solve_with_initial(&a, &f, &d, &reg, tol, &state(&d, &init)).unwrap();
        let diff = from_zero
            .state
            .values()
            .iter()
            .zip(from_random.state.values())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(diff <= 10.0 * tol * from_zero.state.max_abs().max(1.0), "diff {}", diff);
    }

    #[test]
    fn seminorm_of_solution_stays_in_class_envelope(
        p in prop_oneof![Just(2.0), Just(3.0)],
        modes in proptest::collection::vec(-0.9f64..0.9, 3),
    ) {
        // |u_Lambda| <= |u_a| <= |u_lambda| and <f,u_Lambda> <= <f,u_a> <= <f,u_lambda>
        let d = disc(16, 0.4, p);
        let a = coefficient(&d, &modes);
        let f = Density::constant(1.0);
        let tol = nonlocal_hlab::solver::default_tolerance(p);
        let reg = Regularization::default();
        let run = |c: &Coefficient| solve(c, &f, &d, &reg, tol).unwrap().state;
        let (ul, ua, uu) = (
            run(&Coefficient::constant(d.mesh(), 1.0).unwrap()),
            run(&a),
            run(&Coefficient::constant(d.mesh(), 3.0).unwrap()),
        );
        let semi = |u: &ScalarField| gagliardo_seminorm(u, &d).unwrap();
        let work = |u: &ScalarField| nonlocal_hlab::assembly::load_pairing(&f, u, &d).unwrap();
        let slack = 1.0 + 1e-8;
        prop_assert!(semi(&uu) <= semi(&ua) * slack && semi(&ua) <= semi(&ul) * slack);
        prop_assert!(work(&uu) <= work(&ua) * slack && work(&ua) <= work(&ul) * slack);
    }
}
