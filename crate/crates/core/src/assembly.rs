//! Discrete energy `I_a(u) = (1/2p) int int a |D u|^p - <f, u>`, its first
//! variation (the weak-form residual) and the second variation of its
//! smoothed counterpart.
//!
//! All loops run over cell-pair blocks in parallel; partial results are
//! collected in block order and reduced sequentially, so every assembled
//! quantity is bitwise independent of the thread count.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::calculus::signed_pow;
use crate::error::{invalid, Result};
use crate::fields::{Coefficient, ScalarField};
use crate::quadrature::Discretization;

/// Right-hand side density `f in L^{p'}(Omega)`.
#[derive(Clone)]
pub struct Density {
    name: String,
    fun: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density").field("name", &self.name).finish()
    }
}

impl Density {
    pub fn new(name: impl Into<String>, fun: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            fun: Arc::new(fun),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), move |_| c)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.fun)(x)
    }

    /// Largest `|f|` over the load quadrature points.
    pub fn sup_on(&self, disc: &Discretization) -> f64 {
        disc.load_line.x.iter().fold(0.0, |m, &x| m.max(self.eval(x).abs()))
    }
}

/// Schedule for smoothing `|t|^{p-2} t` by `(t^2 + eps^2)^{(p-2)/2} t`.
///
/// `epsilon` and `epsilon_floor` are relative to the solution scale chosen
/// by the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub epsilon: f64,
    pub continuation_factor: f64,
    pub epsilon_floor: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            continuation_factor: 0.1,
            epsilon_floor: 1e-10,
        }
    }
}

impl Regularization {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor <= self.epsilon) {
            return Err(invalid(format!(
                "need 0 < epsilon_floor <= epsilon, got {} and {}",
                self.epsilon_floor, self.epsilon
            )));
        }
        if !(self.continuation_factor > 0.0 && self.continuation_factor < 1.0) {
            return Err(invalid(format!(
                "continuation_factor must lie in (0, 1), got {}",
                self.continuation_factor
            )));
        }
        Ok(())
    }
}

/// Scalar potential `psi` with `psi'(t) = |t|^{p-2} t` (exact) or its smoothed version.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    Exact,
    Smoothed(f64),
}

impl Nonlinearity {
    #[inline]
    pub fn psi(self, t: f64, p: f64) -> f64 {
        match self {
            Nonlinearity::Exact => t.abs().powf(p) / p,
            Nonlinearity::Smoothed(eps) => ((t * t + eps * eps).powf(0.5 * p) - eps.powf(p)) / p,
        }
    }

    #[inline]
    pub fn dpsi(self, t: f64, p: f64) -> f64 {
        match self {
            Nonlinearity::Exact => signed_pow(t, p - 1.0),
            Nonlinearity::Smoothed(eps) => (t * t + eps * eps).powf(0.5 * p - 1.0) * t,
        }
    }

    #[inline]
    pub fn ddpsi(self, t: f64, p: f64) -> f64 {
        if p == 2.0 {
            return 1.0;
        }
        match self {
            Nonlinearity::Exact => (p - 1.0) * t.abs().powf(p - 2.0),
            Nonlinearity::Smoothed(eps) => {
                let r = t * t + eps * eps;
                r.powf(0.5 * p - 2.0) * ((p - 1.0) * t * t + eps * eps)
            }
        }
    }
}

fn check_meshes(a: &Coefficient, u: &ScalarField, disc: &Discretization) -> Result<()> {
    a.mesh().ensure_same(disc.mesh())?;
    u.mesh().ensure_same(disc.mesh())
}

/// Global node numbers touched by block `(i, j)`: `[i, i+1, j, j+1]`.
#[inline]
fn block_nodes(i: usize, j: usize) -> [usize; 4] {
    [i, i + 1, j, j + 1]
}

/// `phi_m(x) - phi_m(y)` for the four local nodes of a point.
#[inline]
fn local_differences(xi: f64, eta: f64) -> [f64; 4] {
    [1.0 - xi, xi, -(1.0 - eta), -eta]
}

fn par_blocks<T: Send>(disc: &Discretization, f: impl Fn(usize, usize, Range<usize>) -> T + Sync) -> Vec<T> {
    let g = &disc.grid;
    (0..g.n_blocks())
        .into_par_iter()
        .map(|b| {
            let (i, j, r) = g.block(b);
            f(i, j, r)
        })
        .collect()
}

/// `(1/2) int int a psi(D u)` over the grid plus `int a_ext psi(u) tail`.
fn nonlinear_energy(a: &Coefficient, u: &ScalarField, disc: &Discretization, nl: Nonlinearity) -> f64 {
    let p = disc.params().p;
    let g = &disc.grid;
    let partial = par_blocks(disc, |i, j, r| {
        let mut acc = 0.0;
        for k in r {
            let d = (u.eval_local(i, g.xi[k]) - u.eval_local(j, g.eta[k])) * g.kernel[k];
            acc += g.weight[k] * nl.psi(d, p);
        }
        0.5 * a.pair(i, j) * acc
    });
    let interior: f64 = partial.iter().sum();
    let line = &disc.tail_line;
    let exterior = line.integrate(|k, _| {
        nl.psi(u.eval_local(line.cell[k], line.t[k]), p) * disc.tail[k]
    });
    interior + a.exterior() * exterior
}

/// Load vector `b_m = int f phi_m` over interior nodes.
pub fn load_vector(f: &Density, disc: &Discretization) -> Vec<f64> {
    let n = disc.mesh().n_cells();
    let line = &disc.load_line;
    let mut b = vec![0.0; n - 1];
    for k in 0..line.len() {
        let c = line.cell[k];
        let wf = line.weight[k] * f.eval(line.x[k]);
        let t = line.t[k];
        if c >= 1 {
            b[c - 1] += wf * (1.0 - t);
        }
        if c + 1 < n {
            b[c] += wf * t;
        }
    }
    b
}

/// `<f, u>` with the load quadrature.
pub fn load_pairing(f: &Density, u: &ScalarField, disc: &Discretization) -> Result<f64> {
    u.mesh().ensure_same(disc.mesh())?;
    let line = &disc.load_line;
    Ok(line.integrate(|k, x| f.eval(x) * u.eval_local(line.cell[k], line.t[k])))
}

/// Smoothed energy `I_a^eps(u)`; coincides with [`assemble_energy`] for `Nonlinearity::Exact`.
pub fn energy_with(
    a: &Coefficient,
    u: &ScalarField,
    f: &Density,
    disc: &Discretization,
    nl: Nonlinearity,
) -> Result<f64> {
    check_meshes(a, u, disc)?;
    Ok(nonlinear_energy(a, u, disc, nl) - load_pairing(f, u, disc)?)
}

/// `I_a(u) = (1/2p) [int int_{Omega x Omega} a |D u|^p + 2 int a_ext |u|^p tail] - <f, u>`.
pub fn assemble_energy(a: &Coefficient, u: &ScalarField, f: &Density, disc: &Discretization) -> Result<f64> {
    energy_with(a, u, f, disc, Nonlinearity::Exact)
}

/// `E(a) = int int_{R x R} a |D u|^p`, the energy of a state including the exterior interaction.
pub fn interaction_energy(a: &Coefficient, u: &ScalarField, disc: &Discretization) -> Result<f64> {
    check_meshes(a, u, disc)?;
    Ok(2.0 * disc.params().p * nonlinear_energy(a, u, disc, Nonlinearity::Exact))
}

/// First variation of the (smoothed) energy at `u` along every interior hat function.
pub fn residual_with(
    a: &Coefficient,
    u: &ScalarField,
    f: &Density,
    disc: &Discretization,
    nl: Nonlinearity,
) -> Result<Vec<f64>> {
    check_meshes(a, u, disc)?;
    let p = disc.params().p;
    let n = disc.mesh().n_cells();
    let g = &disc.grid;
    let partial = par_blocks(disc, |i, j, r| {
        let mut loc = [0.0; 4];
        for k in r {
            let d = (u.eval_local(i, g.xi[k]) - u.eval_local(j, g.eta[k])) * g.kernel[k];
            let c = g.weight[k] * nl.dpsi(d, p) * g.kernel[k];
            let diff = local_differences(g.xi[k], g.eta[k]);
            for l in 0..4 {
                loc[l] += c * diff[l];
            }
        }
        let half_a = 0.5 * a.pair(i, j);
        loc.map(|v| half_a * v)
    });
    let mut res = vec![0.0; n - 1];
    for (b, loc) in partial.iter().enumerate() {
        let nodes = block_nodes(b / n, b % n);
        for l in 0..4 {
            if let Some(row) = interior_index(nodes[l], n) {
                res[row] += loc[l];
            }
        }
    }
    let line = &disc.tail_line;
    for k in 0..line.len() {
        let c = line.cell[k];
        let t = line.t[k];
        let v = line.weight[k] * a.exterior() * nl.dpsi(u.eval_local(c, t), p) * disc.tail[k];
        if let Some(row) = interior_index(c, n) {
            res[row] += v * (1.0 - t);
        }
        if let Some(row) = interior_index(c + 1, n) {
            res[row] += v * t;
        }
    }
    for (r, b) in res.iter_mut().zip(load_vector(f, disc)) {
        *r -= b;
    }
    Ok(res)
}

/// Weak-form residual: component `m` is
/// `(1/2) int int a |D u|^{p-2} D u D phi_m - <f, phi_m>`, exterior pairs included.
pub fn assemble_residual(
    a: &Coefficient,
    u: &ScalarField,
    f: &Density,
    disc: &Discretization,
) -> Result<Vec<f64>> {
    residual_with(a, u, f, disc, Nonlinearity::Exact)
}

#[inline]
fn interior_index(node: usize, n_cells: usize) -> Option<usize> {
    (node >= 1 && node < n_cells).then(|| node - 1)
}

/// Second variation of the energy smoothed with absolute `epsilon`
/// (`epsilon = 0` means the exact nonlinearity).
pub fn assemble_hessian(
    a: &Coefficient,
    u: &ScalarField,
    disc: &Discretization,
    epsilon: f64,
) -> Result<DMatrix<f64>> {
    check_meshes(a, u, disc)?;
    let p = disc.params().p;
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    if p < 2.0 && epsilon == 0.0 {
        return Err(invalid(format!(
            "the Hessian for p = {p} < 2 needs a positive smoothing epsilon"
        )));
    }
    let nl = if epsilon == 0.0 {
        Nonlinearity::Exact
    } else {
        Nonlinearity::Smoothed(epsilon)
    };
    let n = disc.mesh().n_cells();
    let g = &disc.grid;
    let partial = par_blocks(disc, |i, j, r| {
        // upper triangle of the local 4x4 block
        let mut loc = [[0.0; 4]; 4];
        for k in r {
            let d = (u.eval_local(i, g.xi[k]) - u.eval_local(j, g.eta[k])) * g.kernel[k];
            let c = g.weight[k] * nl.ddpsi(d, p) * g.kernel[k] * g.kernel[k];
            let diff = local_differences(g.xi[k], g.eta[k]);
            for l in 0..4 {
                let cl = c * diff[l];
                for m in l..4 {
                    loc[l][m] += cl * diff[m];
                }
            }
        }
        let half_a = 0.5 * a.pair(i, j);
        loc.map(|row| row.map(|v| half_a * v))
    });
    let dim = n - 1;
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    for (b, loc) in partial.iter().enumerate() {
        let nodes = block_nodes(b / n, b % n);
        for l in 0..4 {
            let Some(rl) = interior_index(nodes[l], n) else { continue };
            for m in 0..4 {
                let Some(rm) = interior_index(nodes[m], n) else { continue };
                let v = if l <= m { loc[l][m] } else { loc[m][l] };
                if rl <= rm {
                    hess[(rl, rm)] += v;
                }
            }
        }
    }
    let line = &disc.tail_line;
    for k in 0..line.len() {
        let c = line.cell[k];
        let t = line.t[k];
        let v = line.weight[k] * a.exterior() * nl.ddpsi(u.eval_local(c, t), p) * disc.tail[k];
        let basis = [(c, 1.0 - t), (c + 1, t)];
        for &(nl_, bl) in &basis {
            let Some(rl) = interior_index(nl_, n) else { continue };
            for &(nm, bm) in &basis {
                let Some(rm) = interior_index(nm, n) else { continue };
                if rl <= rm {
                    hess[(rl, rm)] += v * bl * bm;
                }
            }
        }
    }
    for c in 0..dim {
        for r in 0..c {
            hess[(c, r)] = hess[(r, c)];
        }
    }
    Ok(hess)
}
