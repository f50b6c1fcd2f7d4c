//! The (s,p)-nonlocal gradient, its weak divergence, the Gagliardo seminorm,
//! nonlocal fluxes and the duality pairing between fluxes and states.
//!
//! The divergence is only ever evaluated weakly, paired with a discrete test
//! state, so integration by parts holds exactly on the shared product grid.

use rayon::prelude::*;

use crate::error::{invalid, LabError, Result};
use crate::fields::{Coefficient, FracParams, ProductField, ScalarField};
use crate::quadrature::Discretization;

/// `(u(x) - u(y)) / |x - y|^{n/p + s}` with `u` extended by zero outside `(0, 1)`.
pub fn nonlocal_gradient_at(u: &ScalarField, x: f64, y: f64, params: &FracParams) -> Result<f64> {
    if x == y {
        return Err(invalid("nonlocal gradient is not evaluated on the diagonal x = y"));
    }
    Ok((u.eval(x) - u.eval(y)) / (x - y).abs().powf(params.grad_exponent))
}

/// `int_{R \ (0,1)} |x - y|^{-(1 + s p)} dy = (x^{-sp} + (1 - x)^{-sp}) / (s p)`.
pub fn tail_weight(x: f64, params: &FracParams) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(invalid(format!("tail weight needs 0 < x < 1, got {x}")));
    }
    let sp = params.sp();
    Ok((x.powf(-sp) + (1.0 - x).powf(-sp)) / sp)
}

/// `|t|^{p-2} t`, finite at `t = 0` for every `p > 1`.
#[inline]
pub(crate) fn signed_pow(t: f64, e: f64) -> f64 {
    t.abs().powf(e).copysign(t)
}

/// Nonlocal gradient of `u` at every grid point.
pub(crate) fn gradient_on_grid(u: &ScalarField, disc: &Discretization) -> Vec<f64> {
    let g = &disc.grid;
    let mut out = vec![0.0; g.len()];
    out.par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (o, slot) in chunk.iter_mut().enumerate() {
                *slot = point_gradient(u, disc, base + o);
            }
        });
    out
}

const CHUNK: usize = 4096;

#[inline]
fn point_gradient(u: &ScalarField, disc: &Discretization, k: usize) -> f64 {
    let g = &disc.grid;
    let (cx, cy) = point_cells(disc, k);
    (u.eval_local(cx, g.xi[k]) - u.eval_local(cy, g.eta[k])) * g.kernel[k]
}

#[inline]
pub(crate) fn point_cells(disc: &Discretization, k: usize) -> (usize, usize) {
    let g = &disc.grid;
    (g.cell_x[k] as usize, g.cell_y[k] as usize)
}

/// Fixed-order sum of per-chunk partial sums; independent of the thread count.
pub(crate) fn deterministic_sum(len: usize, term: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partial: Vec<f64> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(len);
            (lo..hi).map(&term).sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

/// Exterior part of `int int |D u|^p` over pairs with exactly one point outside `(0, 1)`.
fn exterior_power(u: &ScalarField, disc: &Discretization) -> f64 {
    let line = &disc.tail_line;
    let p = disc.params().p;
    2.0 * line.integrate(|k, _| {
        u.eval_local(line.cell[k], line.t[k]).abs().powf(p) * disc.tail[k]
    })
}

/// `int int_{R x R} |D u|^p`, interior grid plus closed-form exterior tails.
pub fn gagliardo_power(u: &ScalarField, disc: &Discretization) -> Result<f64> {
    u.mesh().ensure_same(disc.mesh())?;
    let p = disc.params().p;
    let g = &disc.grid;
    let interior = deterministic_sum(g.len(), |k| {
        g.weight[k] * point_gradient(u, disc, k).abs().powf(p)
    });
    Ok(interior + exterior_power(u, disc))
}

/// `|u|_{s,p}`.
pub fn gagliardo_seminorm(u: &ScalarField, disc: &Discretization) -> Result<f64> {
    Ok(gagliardo_power(u, disc)?.powf(1.0 / disc.params().p))
}

/// Nonlocal flux `q = a |D u|^{p-2} D u` on the interior grid, with its
/// exterior extension `rho(x) = a_ext |u(x)|^{p-2} u(x)` on the tail rule.
pub fn compute_flux(a: &Coefficient, u: &ScalarField, disc: &Discretization) -> Result<ProductField> {
    a.mesh().ensure_same(disc.mesh())?;
    u.mesh().ensure_same(disc.mesh())?;
    let p = disc.params().p;
    let g = &disc.grid;
    let mut values = vec![0.0; g.len()];
    values
        .par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (o, slot) in chunk.iter_mut().enumerate() {
                let k = base + o;
                let (cx, cy) = point_cells(disc, k);
                *slot = a.pair(cx, cy) * signed_pow(point_gradient(u, disc, k), p - 1.0);
            }
        });
    let line = &disc.tail_line;
    let ext = (0..line.len())
        .map(|k| a.exterior() * signed_pow(u.eval_local(line.cell[k], line.t[k]), p - 1.0))
        .collect();
    ProductField::with_exterior(disc, values, Some(ext))
}

/// Exterior contribution shared by the pairing and the weak divergence.
fn exterior_pairing(phi: &ProductField, v: &ScalarField, disc: &Discretization) -> f64 {
    match phi.exterior() {
        None => 0.0,
        Some(rho) => {
            let line = &disc.tail_line;
            2.0 * line.integrate(|k, _| {
                rho[k] * v.eval_local(line.cell[k], line.t[k]) * disc.tail[k]
            })
        }
    }
}

fn check_shared(phi: &ProductField, v: &ScalarField, disc: &Discretization) -> Result<()> {
    v.mesh().ensure_same(disc.mesh())?;
    phi.ensure_on(disc)
}

/// `int int phi D u dx dy`; the exterior extension of `phi`, if any, is included.
pub fn duality_pairing(phi: &ProductField, u: &ScalarField, disc: &Discretization) -> Result<f64> {
    check_shared(phi, u, disc)?;
    let g = &disc.grid;
    let vals = phi.values();
    let interior = deterministic_sum(g.len(), |k| g.weight[k] * vals[k] * point_gradient(u, disc, k));
    Ok(interior + exterior_pairing(phi, u, disc))
}

/// `<d_{s,p} phi, v> = int v(x) int (phi(x, y) - phi(y, x)) |x - y|^{-(n/p + s)} dy dx`,
/// evaluated with the mirror points of the product grid.
pub fn nonlocal_divergence(phi: &ProductField, v: &ScalarField, disc: &Discretization) -> Result<f64> {
    check_shared(phi, v, disc)?;
    let g = &disc.grid;
    let vals = phi.values();
    let interior = deterministic_sum(g.len(), |k| {
        let (cx, _) = point_cells(disc, k);
        g.weight[k] * g.kernel[k] * v.eval_local(cx, g.xi[k]) * (vals[k] - vals[g.mirror[k]])
    });
    Ok(interior + exterior_pairing(phi, v, disc))
}

/// `int int_{Omega x Omega} phi psi dx dy` for a function `psi` of `(x, y)`.
pub fn product_integral(
    phi: &ProductField,
    disc: &Discretization,
    psi: impl Fn(f64, f64) -> f64 + Sync,
) -> Result<f64> {
    phi.ensure_on(disc)?;
    let g = &disc.grid;
    let vals = phi.values();
    Ok(deterministic_sum(g.len(), |k| g.weight[k] * vals[k] * psi(g.x[k], g.y[k])))
}

/// Largest violation of `lower |D u|^{p-1} <= |q| <= upper |D u|^{p-1}`
/// over all grid points, in units of the bound (0 when the envelope holds
/// within `ulps` units of roundoff).
pub fn flux_envelope_violation(
    q: &ProductField,
    u: &ScalarField,
    lower: f64,
    upper: f64,
    disc: &Discretization,
    ulps: f64,
) -> Result<f64> {
    check_shared(q, u, disc)?;
    if lower > upper {
        return Err(LabError::InvalidArgument("lower bound exceeds upper bound".into()));
    }
    let p = disc.params().p;
    let grad = gradient_on_grid(u, disc);
    let slack = ulps * f64::EPSILON;
    let worst = grad
        .par_iter()
        .zip(q.values().par_iter())
        .map(|(&d, &qk)| {
            let m = d.abs().powf(p - 1.0);
            let lo = lower * m * (1.0 - slack);
            let hi = upper * m * (1.0 + slack);
            let a = qk.abs();
            if a < lo {
                (lo - a) / (lower * m)
            } else if a > hi {
                (a - hi) / (upper * m).max(f64::MIN_POSITIVE)
            } else {
                0.0
            }
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}
