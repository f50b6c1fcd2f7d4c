//! Solution pair `(u, q) = S_a f`: minimization of the discrete energy by
//! damped Newton with smoothing continuation, and a direct linear solve for
//! `p = 2` used as an oracle.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::assembly::{
    assemble_energy, assemble_hessian, assemble_residual, energy_with, interaction_energy, load_pairing,
    load_vector, residual_with, Density, Nonlinearity, Regularization,
};
use crate::calculus::{compute_flux, deterministic_sum, gradient_on_grid, point_cells};
use crate::error::{invalid, LabError, Result};
use crate::fields::{Coefficient, ProductField, ScalarField};
use crate::quadrature::Discretization;

/// Newton steps allowed per smoothing stage.
pub const MAX_STEPS_PER_STAGE: usize = 50;
/// Smoothing stages, the last one at the floor.
pub const MAX_STAGES: usize = 8;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1.0 / (1u64 << 40) as f64;

/// Default stopping tolerance: `1e-10` for the linear case, `1e-8` otherwise.
pub fn default_tolerance(p: f64) -> f64 {
    if p == 2.0 {
        1e-10
    } else {
        1e-8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Newton steps over all stages.
    pub iterations: usize,
    /// `max |residual| / max |load|` at the returned state.
    pub final_residual_norm: f64,
    /// Absolute smoothing used in the last stage (0 for the exact Hessian).
    pub final_epsilon: f64,
    /// `I_a(u)` at the returned state.
    pub energy_value: f64,
    pub converged: bool,
    pub stages: usize,
    /// `I_a` at the initial guess and after every accepted step; nonincreasing for `p >= 2`.
    pub energy_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: ScalarField,
    pub flux: ProductField,
    pub report: SolveReport,
    /// Digest of the coefficient the flux was computed with.
    pub coefficient_digest: u64,
}

impl Solution {
    fn assemble(a: &Coefficient, state: ScalarField, disc: &Discretization, report: SolveReport) -> Result<Self> {
        let flux = compute_flux(a, &state, disc)?;
        Ok(Self {
            state,
            flux,
            report,
            coefficient_digest: a.digest(),
        })
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Absolute smoothing per continuation stage; a single exact stage for `p = 2`.
fn smoothing_schedule(reg: &Regularization, scale: f64, p: f64) -> Vec<f64> {
    if p == 2.0 {
        return vec![0.0];
    }
    let mut out = Vec::new();
    let mut eps = reg.epsilon;
    while eps > reg.epsilon_floor && out.len() + 1 < MAX_STAGES {
        out.push(eps * scale);
        eps *= reg.continuation_factor;
    }
    out.push(reg.epsilon_floor * scale);
    out
}

/// Extra leading stages for a rough initial state: the smoothing starts at
/// the RMS of `D u` and contracts until it meets the regular schedule.
fn warm_up(initial: &ScalarField, disc: &Discretization, reg: &Regularization, schedule: Vec<f64>) -> Vec<f64> {
    let g = &disc.grid;
    let du = gradient_on_grid(initial, disc);
    let rms = deterministic_sum(du.len(), |k| g.weight[k] * du[k] * du[k]).sqrt();
    let mut out = Vec::new();
    let mut eps = rms;
    while eps > schedule[0] {
        out.push(eps);
        eps *= reg.continuation_factor;
    }
    out.extend(schedule);
    out
}

/// Minimizes `I_a` starting from the zero state.
pub fn solve(
    a: &Coefficient,
    f: &Density,
    disc: &Discretization,
    reg: &Regularization,
    tol: f64,
) -> Result<Solution> {
    solve_with_initial(a, f, disc, reg, tol, &ScalarField::zeros(disc.mesh()))
}

/// Minimizes `I_a` from a given initial state.
///
/// Each Newton step solves with the Hessian of the smoothed energy and is
/// globalized by Armijo backtracking. For `p >= 2` the search acts on the
/// exact energy, so the recorded energies never increase. For `p < 2` the
/// exact energy is not twice differentiable and each stage minimizes the
/// smoothed energy instead. The smoothing is reduced stage by stage until
/// the floor; the run succeeds once the exact residual, scaled by the load,
/// drops below `tol`.
pub fn solve_with_initial(
    a: &Coefficient,
    f: &Density,
    disc: &Discretization,
    reg: &Regularization,
    tol: f64,
    initial: &ScalarField,
) -> Result<Solution> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(invalid(format!("tol must be positive, got {tol}")));
    }
    reg.validate()?;
    a.mesh().ensure_same(disc.mesh())?;
    initial.mesh().ensure_same(disc.mesh())?;
    let p = disc.params().p;
    let mesh = disc.mesh();

    let load_norm = max_abs(&load_vector(f, disc));
    if load_norm == 0.0 {
        let zero = ScalarField::zeros(mesh);
        let report = SolveReport {
            iterations: 0,
            final_residual_norm: 0.0,
            final_epsilon: 0.0,
            energy_value: 0.0,
            converged: true,
            stages: 0,
            energy_history: vec![0.0],
        };
        return Solution::assemble(a, zero, disc, report);
    }

    // typical size of D u at the solution
    let scale = (f.sup_on(disc) / a.lower()).powf(1.0 / (p - 1.0));
    let mut schedule = smoothing_schedule(reg, scale, p);
    if p < 2.0 {
        schedule = warm_up(initial, disc, reg, schedule);
    }

    // for p < 2 the line search and stage targets use the smoothed energy
    let smoothed_search = p < 2.0;
    let stage_nl = |eps: f64| {
        if smoothed_search {
            Nonlinearity::Smoothed(eps)
        } else {
            Nonlinearity::Exact
        }
    };

    let mut u = initial.clone();
    let mut history = vec![assemble_energy(a, &u, f, disc)?];
    let mut iterations = 0;
    let mut exact_norm = max_abs(&assemble_residual(a, &u, f, disc)?) / load_norm;

    for (stage, &eps) in schedule.iter().enumerate() {
        let last = stage + 1 == schedule.len();
        let target = if last { tol } else { tol.max(eps / scale) };
        let nl = stage_nl(eps);
        let mut energy = energy_with(a, &u, f, disc, nl)?;
        let mut residual = residual_with(a, &u, f, disc, nl)?;
        let mut res_norm = max_abs(&residual) / load_norm;
        for _ in 0..MAX_STEPS_PER_STAGE {
            if res_norm <= target || (last && exact_norm <= tol) {
                break;
            }
            let hess = assemble_hessian(a, &u, disc, eps)?;
            let chol = Cholesky::new(hess).ok_or_else(|| LabError::SolverFailure {
                iterations,
                residual: exact_norm,
                reason: "Hessian is not positive definite".into(),
            })?;
            let rhs = DVector::from_iterator(residual.len(), residual.iter().map(|r| -r));
            let dir = chol.solve(&rhs);
            let slope: f64 = residual.iter().zip(dir.iter()).map(|(r, d)| r * d).sum();

            let mut t = 1.0;
            let accepted = loop {
                let trial: Vec<f64> = u.interior().iter().zip(dir.iter()).map(|(x, d)| x + t * d).collect();
                let cand = ScalarField::from_interior(mesh, &trial)?;
                let e = energy_with(a, &cand, f, disc, nl)?;
                let armijo = e <= energy + ARMIJO * t * slope;
                let noise = t == 1.0 && e - energy <= 1e-13 * energy.abs();
                if armijo || noise {
                    break Some((cand, e));
                }
                t *= 0.5;
                if t < MIN_STEP {
                    break None;
                }
            };
            let Some((cand, e)) = accepted else {
                break;
            };
            iterations += 1;
            u = cand;
            energy = e;
            residual = residual_with(a, &u, f, disc, nl)?;
            res_norm = max_abs(&residual) / load_norm;
            exact_norm = if smoothed_search {
                max_abs(&assemble_residual(a, &u, f, disc)?) / load_norm
            } else {
                res_norm
            };
            history.push(if smoothed_search { assemble_energy(a, &u, f, disc)? } else { e });
        }
        if last && exact_norm > tol {
            return Err(LabError::SolverFailure {
                iterations,
                residual: exact_norm,
                reason: format!("no convergence to tol {tol:e} within {} stages", schedule.len()),
            });
        }
    }

    let report = SolveReport {
        iterations,
        final_residual_norm: exact_norm,
        final_epsilon: *schedule.last().unwrap_or(&0.0),
        energy_value: assemble_energy(a, &u, f, disc)?,
        converged: true,
        stages: schedule.len(),
        energy_history: history,
    };
    Solution::assemble(a, u, disc, report)
}

/// Stiffness matrix of the `p = 2` problem, assembled point by point.
fn linear_stiffness(a: &Coefficient, disc: &Discretization) -> DMatrix<f64> {
    let n = disc.mesh().n_cells();
    let g = &disc.grid;
    let mut k = DMatrix::<f64>::zeros(n - 1, n - 1);
    let hat = |node: usize, cell: usize, t: f64| -> f64 {
        if node == cell {
            1.0 - t
        } else if node == cell + 1 {
            t
        } else {
            0.0
        }
    };
    for pt in 0..g.len() {
        let (cx, cy) = point_cells(disc, pt);
        let c = 0.5 * a.pair(cx, cy) * g.weight[pt] * g.kernel[pt] * g.kernel[pt];
        let nodes = [cx, cx + 1, cy, cy + 1];
        let diff = |node: usize| hat(node, cx, g.xi[pt]) - hat(node, cy, g.eta[pt]);
        let mut uniq: Vec<usize> = nodes.iter().copied().filter(|&m| m >= 1 && m < n).collect();
        uniq.sort_unstable();
        uniq.dedup();
        for (ia, &m) in uniq.iter().enumerate() {
            let dm = diff(m);
            for &l in &uniq[ia..] {
                k[(m - 1, l - 1)] += c * dm * diff(l);
            }
        }
    }
    let line = &disc.tail_line;
    for pt in 0..line.len() {
        let c = line.weight[pt] * a.exterior() * disc.tail[pt];
        let cell = line.cell[pt];
        for m in cell.max(1)..=(cell + 1).min(n - 1) {
            for l in m..=(cell + 1).min(n - 1) {
                k[(m - 1, l - 1)] += c * hat(m, cell, line.t[pt]) * hat(l, cell, line.t[pt]);
            }
        }
    }
    for c in 0..n - 1 {
        for r in 0..c {
            k[(c, r)] = k[(r, c)];
        }
    }
    k
}

/// Direct solve of the linear `p = 2` problem by dense Cholesky factorization.
pub fn solve_linear_p2(a: &Coefficient, f: &Density, disc: &Discretization) -> Result<Solution> {
    let p = disc.params().p;
    if p != 2.0 {
        return Err(invalid(format!("solve_linear_p2 needs p = 2, got {p}")));
    }
    a.mesh().ensure_same(disc.mesh())?;
    let stiffness = linear_stiffness(a, disc);
    let load = load_vector(f, disc);
    let load_norm = max_abs(&load);
    let chol = Cholesky::new(stiffness).ok_or_else(|| LabError::SolverFailure {
        iterations: 0,
        residual: f64::NAN,
        reason: "stiffness matrix is not positive definite".into(),
    })?;
    let x = chol.solve(&DVector::from_vec(load));
    let state = ScalarField::from_interior(disc.mesh(), x.as_slice())?;
    let residual = assemble_residual(a, &state, f, disc)?;
    let energy = assemble_energy(a, &state, f, disc)?;
    let report = SolveReport {
        iterations: 1,
        final_residual_norm: if load_norm == 0.0 { 0.0 } else { max_abs(&residual) / load_norm },
        final_epsilon: 0.0,
        energy_value: energy,
        converged: true,
        stages: 1,
        energy_history: vec![energy],
    };
    Solution::assemble(a, state, disc, report)
}

/// Relative mismatches of the two optimality identities at a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyIdentity {
    /// `|E - 2<f,u>| / max(E, 2<f,u>)` with `E = int int a |D u|^p`.
    pub energy_mismatch: f64,
    /// `|I_a(u) + <f,u>/p'| / |<f,u>|`.
    pub functional_mismatch: f64,
}

impl EnergyIdentity {
    pub fn worst(&self) -> f64 {
        self.energy_mismatch.max(self.functional_mismatch)
    }
}

fn relative(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Checks `E = 2<f, u>` and `I_a(u) = -<f, u>/p'` at `state`.
pub fn verify_energy_identity(
    state: &ScalarField,
    a: &Coefficient,
    f: &Density,
    disc: &Discretization,
) -> Result<EnergyIdentity> {
    let e = interaction_energy(a, state, disc)?;
    let work = load_pairing(f, state, disc)?;
    let functional = assemble_energy(a, state, f, disc)?;
    let p_prime = disc.params().p_prime;
    Ok(EnergyIdentity {
        energy_mismatch: relative((e - 2.0 * work).abs(), e.abs().max((2.0 * work).abs())),
        functional_mismatch: relative((functional + work / p_prime).abs(), work.abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{build_mesh, FracParams};
    use crate::quadrature::QuadratureRule;

    fn disc(n: usize, s: f64, p: f64) -> Discretization {
        Discretization::new(
            &build_mesh(n).unwrap(),
            FracParams::new(s, p).unwrap(),
            QuadratureRule::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let d = disc(8, 0.4, 3.0);
        let a = Coefficient::constant(d.mesh(), 2.0).unwrap();
        let sol = solve(&a, &Density::constant(0.0), &d, &Regularization::default(), 1e-8).unwrap();
        assert_eq!(sol.report.iterations, 0);
        assert_eq!(sol.state.max_abs(), 0.0);
        assert!(sol.flux.values().iter().all(|&q| q == 0.0));
        let id = verify_energy_identity(&sol.state, &a, &Density::constant(0.0), &d).unwrap();
        assert_eq!(id.worst(), 0.0);
        let lin = solve_linear_p2(
            &Coefficient::constant(d.mesh(), 1.0).unwrap(),
            &Density::constant(0.0),
            &disc(8, 0.4, 2.0),
        )
        .unwrap();
        assert_eq!(lin.state.max_abs(), 0.0);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let d = disc(4, 0.4, 2.0);
        let a = Coefficient::constant(d.mesh(), 1.0).unwrap();
        assert!(solve(&a, &Density::constant(1.0), &d, &Regularization::default(), 0.0).is_err());
    }

    #[test]
    fn linear_stiffness_matches_hessian() {
        let d = disc(8, 0.3, 2.0);
        let a = crate::fields::sample_coefficient(|x, y| 2.0 + (x * y).cos(), 2.5, d.mesh(), 1.0, 3.0)
            .unwrap()
            .coefficient;
        let k = linear_stiffness(&a, &d);
        let h = assemble_hessian(&a, &ScalarField::zeros(d.mesh()), &d, 0.0).unwrap();
        assert!((&k - &h).amax() <= 1e-13 * h.amax());
    }

    #[test]
    fn newton_matches_linear_oracle_at_p2() {
        let d = disc(16, 0.4, 2.0);
        let a = Coefficient::constant(d.mesh(), 1.0).unwrap();
        let f = Density::constant(1.0);
        let sol = solve(&a, &f, &d, &Regularization::default(), 1e-10).unwrap();
        let lin = solve_linear_p2(&a, &f, &d).unwrap();
        let diff = sol
            .state
            .values()
            .iter()
            .zip(lin.state.values())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff <= 1e-10 * lin.state.max_abs());
    }

    #[test]
    fn nonlinear_solves_converge() {
        for &p in &[1.5, 3.0] {
            let d = disc(16, 0.4, p);
            let a = crate::fields::sample_coefficient(|x, y| 2.0 + (6.0 * x * y).sin(), 2.0, d.mesh(), 1.0, 3.0)
                .unwrap()
                .coefficient;
            let f = Density::new("sine", |x| (std::f64::consts::PI * x).sin());
            let sol = solve(&a, &f, &d, &Regularization::default(), 1e-8).unwrap();
            assert!(sol.report.converged && sol.report.final_residual_norm <= 1e-8, "p={p}");
            let id = verify_energy_identity(&sol.state, &a, &f, &d).unwrap();
            assert!(id.worst() <= 1e-7, "p={p}: {id:?}");
            if p >= 2.0 {
                for w in sol.report.energy_history.windows(2) {
                    assert!(w[1] <= w[0] + 1e-13 * w[0].abs(), "p={p}");
                }
            }
        }
    }
}
