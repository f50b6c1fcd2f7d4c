//! H-convergence experiments: solve along a coefficient sequence, compare
//! with the solution for the claimed limit and judge the trends.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{interaction_energy, Density, Regularization};
use crate::calculus::{compute_flux, duality_pairing, flux_envelope_violation, point_cells, product_integral};
use crate::error::{invalid, LabError, Result};
use crate::fields::{build_mesh, Coefficient, FracParams, ProductField, ScalarField};
use crate::quadrature::{Discretization, QuadratureRule};
use crate::solver::{solve, verify_energy_identity, Solution};

use super::families::{CoefficientSequence, Family, ALTERNATOR_EVEN, ALTERNATOR_ODD};
use super::suite::TestSuite;

/// Required ratio between the last and the first entry of a converging column.
pub const DECREASE_FACTOR: f64 = 0.3;
/// Entries at or below this value count as converged.
pub const NOISE_FLOOR: f64 = 1e-12;
/// Roundoff allowance, in units of machine epsilon, for the flux envelope.
pub const ENVELOPE_ULPS: f64 = 4.0;

/// `1`, `sin(pi x)` and `4 x (1 - x)`.
pub fn standard_loads() -> Vec<Density> {
    vec![
        Density::constant(1.0),
        Density::new("sin(pi x)", |x| (std::f64::consts::PI * x).sin()),
        Density::new("4x(1-x)", |x| 4.0 * x * (1.0 - x)),
    ]
}

/// Everything an experiment needs besides the coefficient sequence.
#[derive(Debug, Clone)]
pub struct LabSettings {
    pub params: FracParams,
    pub rule: QuadratureRule,
    pub reg: Regularization,
    pub tol: f64,
    pub suite: TestSuite,
    pub loads: Vec<Density>,
}

impl LabSettings {
    pub fn new(params: FracParams, tol: f64) -> Self {
        Self {
            params,
            rule: QuadratureRule::default(),
            reg: Regularization::default(),
            tol,
            suite: TestSuite::default(),
            loads: standard_loads(),
        }
    }

    fn discretization(&self, n_cells: usize) -> Result<Discretization> {
        Discretization::new(&build_mesh(n_cells)?, self.params, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HRow {
    pub k: usize,
    pub n_cells: usize,
    pub state_weak_gap: f64,
    pub state_strong_gap: f64,
    pub flux_weak_gap: f64,
    pub coeff_weak_star_gap: f64,
    pub energy_gap: f64,
    pub div_curl_gap: f64,
    pub solve_iterations: usize,
    /// Worst flux-envelope violation over the solves of this row.
    pub envelope_violation: f64,
    /// Worst energy-identity mismatch over the solves of this row.
    pub identity_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HReport {
    pub family: Family,
    pub claimed_limit: String,
    pub s: f64,
    pub p: f64,
    pub tol: f64,
    pub loads: Vec<String>,
    pub fine_cells: usize,
    pub rows: Vec<HRow>,
}

impl HReport {
    pub fn column(&self, pick: impl Fn(&HRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(pick).collect()
    }

    pub fn max_envelope_violation(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.envelope_violation))
    }

    pub fn max_identity_mismatch(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.identity_mismatch))
    }
}

/// `(int |u - v|^r)^(1/r)` over `(0, 1)`.
pub fn lp_distance(u: &ScalarField, v: &ScalarField, r: f64, disc: &Discretization) -> Result<f64> {
    u.mesh().ensure_same(disc.mesh())?;
    v.mesh().ensure_same(disc.mesh())?;
    let line = &disc.load_line;
    let s = line.integrate(|k, _| {
        let (c, t) = (line.cell[k], line.t[k]);
        (u.eval_local(c, t) - v.eval_local(c, t)).abs().powf(r)
    });
    Ok(s.powf(1.0 / r))
}

pub fn lp_norm(u: &ScalarField, r: f64, disc: &Discretization) -> Result<f64> {
    lp_distance(u, &ScalarField::zeros(disc.mesh()), r, disc)
}

/// The piecewise-constant coefficient sampled at every grid point.
pub fn coefficient_on_grid(a: &Coefficient, disc: &Discretization) -> Result<ProductField> {
    a.mesh().ensure_same(disc.mesh())?;
    let values = (0..disc.grid.len())
        .map(|k| {
            let (i, j) = point_cells(disc, k);
            a.pair(i, j)
        })
        .collect();
    ProductField::new(disc, values)
}

fn interior_difference(a: &ProductField, b: &ProductField, disc: &Discretization) -> Result<ProductField> {
    a.ensure_on(disc)?;
    b.ensure_on(disc)?;
    let v = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    ProductField::new(disc, v)
}

/// `max_r |int int (a_k - a) psi_r|` over the coefficient tests.
pub fn weak_star_gap(a_k: &Coefficient, a: &Coefficient, suite: &TestSuite, disc: &Discretization) -> Result<f64> {
    let diff = interior_difference(&coefficient_on_grid(a_k, disc)?, &coefficient_on_grid(a, disc)?, disc)?;
    let mut worst: f64 = 0.0;
    for r in 0..suite.n_coefficient_tests() {
        worst = worst.max(product_integral(&diff, disc, |x, y| suite.coefficient_test(r, x, y))?.abs());
    }
    Ok(worst)
}

/// `max_j |<u_k - u, v_j>|` over the state tests.
pub fn state_weak_gap(u_k: &ScalarField, u: &ScalarField, suite: &TestSuite, disc: &Discretization) -> Result<f64> {
    u_k.mesh().ensure_same(disc.mesh())?;
    u.mesh().ensure_same(disc.mesh())?;
    let line = &disc.load_line;
    let mut worst: f64 = 0.0;
    for j in 1..=suite.n_states {
        let g = line.integrate(|k, x| {
            let (c, t) = (line.cell[k], line.t[k]);
            (u_k.eval_local(c, t) - u.eval_local(c, t)) * suite.state_test(j, x)
        });
        worst = worst.max(g.abs());
    }
    Ok(worst)
}

/// `max_m |int int (q_k - q) phi_m|` over the product tests on `Omega x Omega`.
pub fn flux_weak_gap(q_k: &ProductField, q: &ProductField, suite: &TestSuite, disc: &Discretization) -> Result<f64> {
    let diff = interior_difference(q_k, q, disc)?;
    let mut worst: f64 = 0.0;
    for m in 0..suite.n_product_tests() {
        worst = worst.max(product_integral(&diff, disc, |x, y| suite.product_test(m, x, y))?.abs());
    }
    Ok(worst)
}

/// `max_w |int int w q_k D u_k - int int w q D u|` over the smooth windows of the suite.
pub fn div_curl_check(
    u_k: &ScalarField,
    q_k: &ProductField,
    u: &ScalarField,
    q: &ProductField,
    suite: &TestSuite,
    disc: &Discretization,
) -> Result<f64> {
    q_k.ensure_on(disc)?;
    q.ensure_on(disc)?;
    let g = &disc.grid;
    let mut worst: f64 = 0.0;
    for r in suite.windows() {
        let w: Vec<f64> = (0..g.len()).map(|k| suite.coefficient_test(r, g.x[k], g.y[k])).collect();
        let weighted = |f: &ProductField| {
            ProductField::new(disc, f.values().iter().zip(&w).map(|(v, wk)| v * wk).collect())
        };
        let a = duality_pairing(&weighted(q_k)?, u_k, disc)?;
        let b = duality_pairing(&weighted(q)?, u, disc)?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

/// Last `ceil(n/2)` entries non-increasing and final at most `0.3 x` initial;
/// values at the noise floor pass both tests. One entry or none passes trivially.
pub fn eventually_decreasing(series: &[f64]) -> bool {
    let n = series.len();
    if n <= 1 {
        return true;
    }
    let tail = &series[n - n.div_ceil(2)..];
    let monotone = tail.windows(2).all(|w| w[1] <= w[0] || w[1] <= NOISE_FLOOR);
    let last = series[n - 1];
    monotone && (last <= DECREASE_FACTOR * series[0] || last <= NOISE_FLOOR)
}

/// Energy gaps decrease along the run.
pub fn energy_continuity_check(report: &HReport) -> bool {
    eventually_decreasing(&report.column(|r| r.energy_gap))
}

/// Whenever the state column converges, the flux column converges as well,
/// and its final-to-initial ratio is at most `tol_factor` times that of the states.
pub fn g_equals_h_check(report: &HReport, tol_factor: f64) -> bool {
    let states = report.column(|r| r.state_weak_gap);
    if !eventually_decreasing(&states) {
        return true;
    }
    let fluxes = report.column(|r| r.flux_weak_gap);
    if !eventually_decreasing(&fluxes) {
        return false;
    }
    let ratio = |c: &[f64]| {
        let (first, last) = (c[0], c[c.len() - 1]);
        if last <= NOISE_FLOOR {
            0.0
        } else {
            last / first
        }
    };
    if states.len() <= 1 {
        return true;
    }
    ratio(&fluxes) <= tol_factor * ratio(&states).max(NOISE_FLOOR)
}

/// Outcome of the forward (sufficiency) test on every tracked column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SufficiencyVerdict {
    pub state_strong: bool,
    pub flux_weak: bool,
    pub energy: bool,
    pub div_curl: bool,
}

impl SufficiencyVerdict {
    pub fn of(report: &HReport) -> Self {
        Self {
            state_strong: eventually_decreasing(&report.column(|r| r.state_strong_gap)),
            flux_weak: eventually_decreasing(&report.column(|r| r.flux_weak_gap)),
            energy: energy_continuity_check(report),
            div_curl: eventually_decreasing(&report.column(|r| r.div_curl_gap)),
        }
    }

    pub fn passed(&self) -> bool {
        self.state_strong && self.flux_weak && self.energy && self.div_curl
    }
}

fn abort(k: usize) -> impl Fn(LabError) -> LabError {
    move |e| LabError::ExperimentAborted { k, source: Box::new(e) }
}

/// Gaps for one `(k, load)` pair.
struct Sample {
    row: HRow,
}

#[allow(clippy::too_many_arguments)]
fn measure(
    k: usize,
    a_k: &Coefficient,
    sol_k: &Solution,
    a: &Coefficient,
    sol: &Solution,
    f: &Density,
    disc: &Discretization,
    fine: &Discretization,
    seq: &CoefficientSequence,
    settings: &LabSettings,
) -> Result<Sample> {
    let suite = &settings.suite;
    let p = settings.params.p;
    let fm = fine.mesh();
    let (ak_f, a_f) = (a_k.refine(fm)?, a.refine(fm)?);
    let (uk_f, u_f) = (sol_k.state.prolongate(fm)?, sol.state.prolongate(fm)?);
    let qk_f = compute_flux(&ak_f, &uk_f, fine)?;
    let q_f = compute_flux(&a_f, &u_f, fine)?;

    let mut envelope: f64 = 0.0;
    let mut identity: f64 = 0.0;
    for (coef, s) in [(a_k, sol_k), (a, sol)] {
        envelope = envelope.max(flux_envelope_violation(
            &s.flux,
            &s.state,
            seq.lower(),
            seq.upper(),
            disc,
            ENVELOPE_ULPS,
        )?);
        identity = identity.max(verify_energy_identity(&s.state, coef, f, disc)?.worst());
    }
    let row = HRow {
        k,
        n_cells: disc.mesh().n_cells(),
        state_weak_gap: state_weak_gap(&uk_f, &u_f, suite, fine)?,
        state_strong_gap: lp_distance(&uk_f, &u_f, p, fine)?,
        flux_weak_gap: flux_weak_gap(&qk_f, &q_f, suite, fine)?,
        coeff_weak_star_gap: weak_star_gap(&ak_f, &a_f, suite, fine)?,
        energy_gap: (interaction_energy(a_k, &sol_k.state, disc)? - interaction_energy(a, &sol.state, disc)?).abs(),
        div_curl_gap: div_curl_check(&uk_f, &qk_f, &u_f, &q_f, suite, fine)?,
        solve_iterations: sol_k.report.iterations,
        envelope_violation: envelope,
        identity_mismatch: identity,
    };
    Ok(Sample { row })
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    a / gcd(a, b) * b
}

/// Largest cell count accepted for the common comparison mesh.
pub const MAX_FINE_CELLS: usize = 4096;

/// Solves along the sequence and against its claimed limit.
///
/// For each `k` both the sequence member and the claimed limit are solved on
/// the mesh of index `k`, so the gaps measure the distance to the limit
/// problem and not the discretization error. All gaps are then evaluated on
/// the common refinement of every mesh in the run after exact transfer.
/// Each column holds the maximum over the loads.
pub fn run_h_experiment(seq: &CoefficientSequence, k_list: &[usize], settings: &LabSettings) -> Result<HReport> {
    if k_list.is_empty() {
        return Err(invalid("k_list must not be empty"));
    }
    if k_list.contains(&0) {
        return Err(invalid("k_list entries must be positive"));
    }
    if settings.loads.is_empty() {
        return Err(invalid("at least one load is required"));
    }
    let cells: Vec<usize> = k_list.iter().map(|&k| seq.n_cells_for(k)).collect();
    let fine_cells = cells.iter().copied().fold(1, lcm);
    if fine_cells > MAX_FINE_CELLS {
        return Err(invalid(format!(
            "meshes {cells:?} have no common refinement with at most {MAX_FINE_CELLS} cells"
        )));
    }
    let mut discs: BTreeMap<usize, Discretization> = BTreeMap::new();
    for &n in cells.iter().chain(std::iter::once(&fine_cells)) {
        if let std::collections::btree_map::Entry::Vacant(e) = discs.entry(n) {
            e.insert(settings.discretization(n)?);
        }
    }
    let fine = &discs[&fine_cells];

    // limit solves, one per distinct mesh and load
    let limit_keys: Vec<(usize, usize)> = discs
        .keys()
        .filter(|n| cells.contains(n))
        .flat_map(|&n| (0..settings.loads.len()).map(move |l| (n, l)))
        .collect();
    let limits: Vec<(Coefficient, Solution)> = limit_keys
        .par_iter()
        .map(|&(n, l)| {
            let d = &discs[&n];
            let a = seq.claimed_limit(d.mesh())?;
            let k = k_list[cells.iter().position(|&c| c == n).unwrap_or(0)];
            let sol = solve(&a, &settings.loads[l], d, &settings.reg, settings.tol).map_err(abort(k))?;
            Ok((a, sol))
        })
        .collect::<Result<_>>()?;
    let limit_of = |n: usize, l: usize| &limits[limit_keys.iter().position(|&key| key == (n, l)).unwrap()];

    let tasks: Vec<(usize, usize)> = (0..k_list.len())
        .flat_map(|i| (0..settings.loads.len()).map(move |l| (i, l)))
        .collect();
    let samples: Vec<Sample> = tasks
        .par_iter()
        .map(|&(i, l)| {
            let k = k_list[i];
            let disc = &discs[&cells[i]];
            let f = &settings.loads[l];
            let run = || -> Result<Sample> {
                let a_k = seq.coefficient(k, disc.mesh())?;
                let sol_k = solve(&a_k, f, disc, &settings.reg, settings.tol)?;
                let (a, sol) = limit_of(cells[i], l);
                measure(k, &a_k, &sol_k, a, sol, f, disc, fine, seq, settings)
            };
            run().map_err(abort(k))
        })
        .collect::<Result<_>>()?;

    let rows = samples
        .chunks(settings.loads.len())
        .map(|per_load| {
            let mut row = per_load[0].row.clone();
            for s in &per_load[1..] {
                let r = &s.row;
                row.state_weak_gap = row.state_weak_gap.max(r.state_weak_gap);
                row.state_strong_gap = row.state_strong_gap.max(r.state_strong_gap);
                row.flux_weak_gap = row.flux_weak_gap.max(r.flux_weak_gap);
                row.coeff_weak_star_gap = row.coeff_weak_star_gap.max(r.coeff_weak_star_gap);
                row.energy_gap = row.energy_gap.max(r.energy_gap);
                row.div_curl_gap = row.div_curl_gap.max(r.div_curl_gap);
                row.solve_iterations += r.solve_iterations;
                row.envelope_violation = row.envelope_violation.max(r.envelope_violation);
                row.identity_mismatch = row.identity_mismatch.max(r.identity_mismatch);
            }
            row
        })
        .collect();

    Ok(HReport {
        family: seq.family(),
        claimed_limit: seq.limit_name().to_string(),
        s: settings.params.s,
        p: settings.params.p,
        tol: settings.tol,
        loads: settings.loads.iter().map(|f| f.name().to_string()).collect(),
        fine_cells,
        rows,
    })
}

/// Distance between the odd and even subsequence states, per load.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NecessityRow {
    pub load: String,
    pub odd_norm: f64,
    pub even_norm: f64,
    pub odd_even_distance: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NecessityReport {
    pub n_cells: usize,
    pub k_list: Vec<usize>,
    pub rows: Vec<NecessityRow>,
    /// Required lower bound on `|u_odd - u_even| / |u_odd|`.
    pub threshold: f64,
    pub no_h_limit: bool,
}

pub const NECESSITY_THRESHOLD: f64 = 0.1;

/// Solves the alternator along `k_list` and measures the two subsequential
/// limits in `L^2`. Every odd member is the same problem, as is every even
/// one, so each subsequence is constant and its limit is any member's state.
pub fn run_necessity(n_cells: usize, k_list: &[usize], settings: &LabSettings) -> Result<NecessityReport> {
    let disc = settings.discretization(n_cells)?;
    let seq = super::families::gen_non_converging_alternator(disc.mesh());
    if !k_list.iter().any(|k| k % 2 == 1) || !k_list.iter().any(|k| k % 2 == 0) {
        return Err(invalid("k_list needs at least one odd and one even index"));
    }
    let odd_k = *k_list.iter().find(|k| *k % 2 == 1).unwrap_or(&1);
    let even_k = *k_list.iter().find(|k| *k % 2 == 0).unwrap_or(&2);
    let tasks: Vec<(usize, usize)> = (0..settings.loads.len())
        .flat_map(|l| [(l, odd_k), (l, even_k)])
        .collect();
    let states: Vec<ScalarField> = tasks
        .par_iter()
        .map(|&(l, k)| {
            let a = seq.coefficient(k, disc.mesh())?;
            Ok(solve(&a, &settings.loads[l], &disc, &settings.reg, settings.tol)
                .map_err(abort(k))?
                .state)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (l, f) in settings.loads.iter().enumerate() {
        let (odd, even) = (&states[2 * l], &states[2 * l + 1]);
        let odd_norm = lp_norm(odd, 2.0, &disc)?;
        let dist = lp_distance(odd, even, 2.0, &disc)?;
        rows.push(NecessityRow {
            load: f.name().to_string(),
            odd_norm,
            even_norm: lp_norm(even, 2.0, &disc)?,
            odd_even_distance: dist,
            ratio: if odd_norm == 0.0 { 0.0 } else { dist / odd_norm },
        });
    }
    let no_h_limit = rows.iter().all(|r| r.ratio >= NECESSITY_THRESHOLD);
    Ok(NecessityReport {
        n_cells,
        k_list: k_list.to_vec(),
        rows,
        threshold: NECESSITY_THRESHOLD,
        no_h_limit,
    })
}

/// The two constants of the alternator, exposed for reporting.
pub fn alternator_values() -> (f64, f64) {
    (ALTERNATOR_ODD, ALTERNATOR_EVEN)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ContrastRow {
    pub load: String,
    pub to_arithmetic: f64,
    pub to_harmonic: f64,
    pub separation: f64,
    pub arithmetic_ratio: f64,
    pub harmonic_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ContrastReport {
    pub k: usize,
    pub n_cells: usize,
    pub alpha: f64,
    pub beta: f64,
    pub arithmetic_mean: f64,
    pub harmonic_mean: f64,
    pub rows: Vec<ContrastRow>,
    pub arithmetic_bound: f64,
    pub harmonic_bound: f64,
    pub passed: bool,
}

pub const ARITHMETIC_BOUND: f64 = 0.1;
pub const HARMONIC_BOUND: f64 = 0.5;

/// `L^2` distances from the checkerboard solution at index `k` to the
/// solutions with the arithmetic and harmonic means of `alpha` and `beta`,
/// relative to the distance between those two.
pub fn run_checkerboard_contrast(
    alpha: f64,
    beta: f64,
    k: usize,
    cells_base: usize,
    settings: &LabSettings,
) -> Result<ContrastReport> {
    let seq = CoefficientSequence::product_checkerboard(alpha, beta, cells_base)?;
    let n = seq.n_cells_for(k);
    let disc = settings.discretization(n)?;
    let arith = 0.5 * (alpha + beta);
    let harm = 2.0 * alpha * beta / (alpha + beta);
    let coefs = [
        seq.coefficient(k, disc.mesh())?,
        Coefficient::constant(disc.mesh(), arith)?,
        Coefficient::constant(disc.mesh(), harm)?,
    ];
    let tasks: Vec<(usize, usize)> = (0..settings.loads.len())
        .flat_map(|l| (0..3).map(move |c| (l, c)))
        .collect();
    let states: Vec<ScalarField> = tasks
        .par_iter()
        .map(|&(l, c)| {
            Ok(solve(&coefs[c], &settings.loads[l], &disc, &settings.reg, settings.tol)
                .map_err(abort(k))?
                .state)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (l, f) in settings.loads.iter().enumerate() {
        let (uk, ua, uh) = (&states[3 * l], &states[3 * l + 1], &states[3 * l + 2]);
        let sep = lp_distance(ua, uh, 2.0, &disc)?;
        let da = lp_distance(uk, ua, 2.0, &disc)?;
        let dh = lp_distance(uk, uh, 2.0, &disc)?;
        rows.push(ContrastRow {
            load: f.name().to_string(),
            to_arithmetic: da,
            to_harmonic: dh,
            separation: sep,
            arithmetic_ratio: da / sep,
            harmonic_ratio: dh / sep,
        });
    }
    let passed = rows
        .iter()
        .all(|r| r.arithmetic_ratio <= ARITHMETIC_BOUND && r.harmonic_ratio >= HARMONIC_BOUND);
    Ok(ContrastReport {
        k,
        n_cells: n,
        alpha,
        beta,
        arithmetic_mean: arith,
        harmonic_mean: harm,
        rows,
        arithmetic_bound: ARITHMETIC_BOUND,
        harmonic_bound: HARMONIC_BOUND,
        passed,
    })
}

/// Two claimed limits whose solutions differ cannot both pass the trend test on the state column.
pub fn uniqueness_check(first: &HReport, second: &HReport) -> bool {
    let pass = |r: &HReport| eventually_decreasing(&r.column(|row| row.state_strong_gap));
    !(pass(first) && pass(second))
}
