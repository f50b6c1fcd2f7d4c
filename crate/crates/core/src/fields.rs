//! Meshes, discrete states and kernel coefficients on the unit interval.
//!
//! States are continuous piecewise-linear functions on a uniform partition of
//! `(0, 1)` that vanish at both endpoints and are extended by zero outside the
//! domain. Coefficients are piecewise constant on products of cells and carry
//! a single constant value for the interior/exterior interaction.

use crate::error::{invalid, LabError, Result};
use crate::quadrature::{Discretization, GridSignature};

/// Spatial dimension of the domain.
pub const DIM: f64 = 1.0;

/// Fractional order `s`, integrability exponent `p` and the exponents derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracParams {
    pub s: f64,
    pub p: f64,
    /// Conjugate exponent `p / (p - 1)`.
    pub p_prime: f64,
    /// Exponent `n + s p` of the operator kernel `|x - y|^{-(n + s p)}`.
    pub kernel_exponent: f64,
    /// Exponent `n / p + s` in the denominator of the nonlocal gradient.
    pub grad_exponent: f64,
}

impl FracParams {
    pub fn new(s: f64, p: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(invalid(format!("s must lie in (0, 1), got {s}")));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid(format!("p must lie in (1, inf), got {p}")));
        }
        Ok(Self {
            s,
            p,
            p_prime: p / (p - 1.0),
            kernel_exponent: DIM + s * p,
            grad_exponent: DIM / p + s,
        })
    }

    /// `s * p`, the exponent of the exterior tail integral.
    pub fn sp(&self) -> f64 {
        self.s * self.p
    }
}

/// Uniform partition of `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    n_cells: usize,
    nodes: Vec<f64>,
    cell_width: f64,
}

pub fn build_mesh(n_cells: usize) -> Result<Mesh> {
    if n_cells < 2 {
        return Err(invalid(format!("a mesh needs at least 2 cells, got {n_cells}")));
    }
    let n = n_cells as f64;
    let nodes = (0..=n_cells).map(|i| i as f64 / n).collect();
    Ok(Mesh {
        n_cells,
        nodes,
        cell_width: 1.0 / n,
    })
}

impl Mesh {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    /// Number of interior (free) nodes.
    pub fn n_interior(&self) -> usize {
        self.n_cells - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn midpoint(&self, cell: usize) -> f64 {
        (cell as f64 + 0.5) / self.n_cells as f64
    }

    /// Cell containing `x` and the local coordinate of `x` in it. Points on
    /// an interior node are assigned to the cell on their right.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !(0.0..=1.0).contains(&x) {
            return None;
        }
        let t = x * self.n_cells as f64;
        let cell = (t.floor() as usize).min(self.n_cells - 1);
        Some((cell, t - cell as f64))
    }

    /// Refinement factor from `self` to `fine`, if `fine` is a uniform refinement.
    pub fn refinement_factor(&self, fine: &Mesh) -> Result<usize> {
        if !fine.n_cells.is_multiple_of(self.n_cells) {
            return Err(invalid(format!(
                "mesh with {} cells does not refine mesh with {} cells",
                fine.n_cells, self.n_cells
            )));
        }
        Ok(fine.n_cells / self.n_cells)
    }

    pub(crate) fn ensure_same(&self, other: &Mesh) -> Result<()> {
        if self.n_cells != other.n_cells {
            return Err(LabError::MeshMismatch {
                left: self.n_cells,
                right: other.n_cells,
            });
        }
        Ok(())
    }
}

/// Continuous piecewise-linear state with zero trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    mesh: Mesh,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(invalid(format!(
                "expected {} nodal values, got {}",
                mesh.n_nodes(),
                values.len()
            )));
        }
        if values[0] != 0.0 || values[mesh.n_cells] != 0.0 {
            return Err(invalid("nodal values at both endpoints must be exactly 0"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(LabError::Evaluation(format!("non-finite nodal value {v}")));
        }
        Ok(Self {
            mesh: mesh.clone(),
            values,
        })
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            mesh: mesh.clone(),
            values: vec![0.0; mesh.n_nodes()],
        }
    }

    /// Builds a field from the values at interior nodes `1..n_cells`.
    pub fn from_interior(mesh: &Mesh, interior: &[f64]) -> Result<Self> {
        if interior.len() != mesh.n_interior() {
            return Err(invalid(format!(
                "expected {} interior values, got {}",
                mesh.n_interior(),
                interior.len()
            )));
        }
        let mut values = Vec::with_capacity(mesh.n_nodes());
        values.push(0.0);
        values.extend_from_slice(interior);
        values.push(0.0);
        Self::new(mesh, values)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interior(&self) -> &[f64] {
        &self.values[1..self.mesh.n_cells]
    }

    /// Value at local coordinate `t` of `cell`.
    #[inline]
    pub fn eval_local(&self, cell: usize, t: f64) -> f64 {
        self.values[cell] * (1.0 - t) + self.values[cell + 1] * t
    }

    /// Piecewise-linear reconstruction, zero outside `[0, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        match self.mesh.locate(x) {
            Some((cell, t)) => self.eval_local(cell, t),
            None => 0.0,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Exact embedding into a uniformly refined mesh.
    pub fn prolongate(&self, fine: &Mesh) -> Result<Self> {
        let r = self.mesh.refinement_factor(fine)?;
        let rf = r as f64;
        let mut values = Vec::with_capacity(fine.n_nodes());
        for cell in 0..self.mesh.n_cells {
            for sub in 0..r {
                values.push(self.eval_local(cell, sub as f64 / rf));
            }
        }
        values.push(0.0);
        Self::new(fine, values)
    }
}

/// Nodal interpolation of `g`; the endpoint values are forced to zero.
pub fn interpolate_state(g: impl Fn(f64) -> f64, mesh: &Mesh) -> Result<ScalarField> {
    let n = mesh.n_cells();
    let mut values = vec![0.0; mesh.n_nodes()];
    for i in 1..n {
        let x = mesh.nodes()[i];
        let v = g(x);
        if !v.is_finite() {
            return Err(LabError::Evaluation(format!(
                "state function is {v} at node x = {x}"
            )));
        }
        values[i] = v;
    }
    ScalarField::new(mesh, values)
}

/// Symmetric kernel coefficient, piecewise constant on cell products.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    mesh: Mesh,
    pair_values: Vec<f64>,
    exterior: f64,
    lower: f64,
    upper: f64,
}

impl Coefficient {
    /// Validates symmetry and the `[lower, upper]` bounds of a row-major pair table.
    pub fn from_pair_values(
        mesh: &Mesh,
        pair_values: Vec<f64>,
        exterior: f64,
        lower: f64,
        upper: f64,
    ) -> Result<Self> {
        check_bounds(exterior, lower, upper)?;
        let n = mesh.n_cells();
        if pair_values.len() != n * n {
            return Err(invalid(format!(
                "expected {} pair values, got {}",
                n * n,
                pair_values.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = pair_values[i * n + j];
                if v != pair_values[j * n + i] {
                    return Err(invalid(format!("coefficient not symmetric at ({i}, {j})")));
                }
                if !(lower..=upper).contains(&v) {
                    return Err(invalid(format!(
                        "coefficient {v} at ({i}, {j}) outside [{lower}, {upper}]"
                    )));
                }
            }
        }
        Ok(Self {
            mesh: mesh.clone(),
            pair_values,
            exterior,
            lower,
            upper,
        })
    }

    pub fn constant(mesh: &Mesh, value: f64) -> Result<Self> {
        let n = mesh.n_cells();
        Self::from_pair_values(mesh, vec![value; n * n], value, value, value)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.pair_values[i * self.mesh.n_cells() + j]
    }

    pub fn pair_values(&self) -> &[f64] {
        &self.pair_values
    }

    pub fn exterior(&self) -> f64 {
        self.exterior
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// `c * a`, with bounds scaled accordingly.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("scale factor must be positive, got {c}")));
        }
        Ok(Self {
            mesh: self.mesh.clone(),
            pair_values: self.pair_values.iter().map(|v| c * v).collect(),
            exterior: c * self.exterior,
            lower: c * self.lower,
            upper: c * self.upper,
        })
    }

    /// Same bounds, different class envelope; values must still fit.
    pub fn with_bounds(&self, lower: f64, upper: f64) -> Result<Self> {
        Self::from_pair_values(&self.mesh, self.pair_values.clone(), self.exterior, lower, upper)
    }

    /// Exact representation on a uniformly refined mesh.
    pub fn refine(&self, fine: &Mesh) -> Result<Self> {
        let r = self.mesh.refinement_factor(fine)?;
        let n = self.mesh.n_cells();
        let nf = fine.n_cells();
        let mut pair_values = Vec::with_capacity(nf * nf);
        for i in 0..nf {
            for j in 0..nf {
                pair_values.push(self.pair_values[(i / r) * n + j / r]);
            }
        }
        Ok(Self {
            mesh: fine.clone(),
            pair_values,
            exterior: self.exterior,
            lower: self.lower,
            upper: self.upper,
        })
    }

    /// Order-dependent digest of every stored value, used to tie a flux to its coefficient.
    pub fn digest(&self) -> u64 {
        // FNV-1a over the IEEE bit patterns.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(self.mesh.n_cells() as f64);
        feed(self.exterior);
        for &v in &self.pair_values {
            feed(v);
        }
        h
    }
}

fn check_bounds(exterior: f64, lower: f64, upper: f64) -> Result<()> {
    if !(lower > 0.0 && lower <= upper && upper.is_finite()) {
        return Err(invalid(format!(
            "coefficient bounds must satisfy 0 < lambda <= Lambda, got [{lower}, {upper}]"
        )));
    }
    if !(lower..=upper).contains(&exterior) {
        return Err(invalid(format!(
            "exterior value {exterior} outside [{lower}, {upper}]"
        )));
    }
    Ok(())
}

/// A sampled coefficient together with the number of cell pairs that had to be clamped.
#[derive(Debug, Clone)]
pub struct SampledCoefficient {
    pub coefficient: Coefficient,
    pub clamped: usize,
}

/// Samples `a_fun` at cell-midpoint pairs, symmetrizes by averaging and clamps into `[lower, upper]`.
pub fn sample_coefficient(
    a_fun: impl Fn(f64, f64) -> f64,
    exterior: f64,
    mesh: &Mesh,
    lower: f64,
    upper: f64,
) -> Result<SampledCoefficient> {
    check_bounds(exterior, lower, upper)?;
    let n = mesh.n_cells();
    let mids: Vec<f64> = (0..n).map(|i| mesh.midpoint(i)).collect();
    let mut pair_values = vec![0.0; n * n];
    let mut clamped = 0;
    for i in 0..n {
        for j in i..n {
            let ab = a_fun(mids[i], mids[j]);
            let ba = a_fun(mids[j], mids[i]);
            let raw = 0.5 * (ab + ba);
            if !raw.is_finite() {
                return Err(LabError::Evaluation(format!(
                    "coefficient is {raw} at ({}, {})",
                    mids[i], mids[j]
                )));
            }
            let v = raw.clamp(lower, upper);
            if v != raw {
                clamped += if i == j { 1 } else { 2 };
            }
            pair_values[i * n + j] = v;
            pair_values[j * n + i] = v;
        }
    }
    Ok(SampledCoefficient {
        coefficient: Coefficient::from_pair_values(mesh, pair_values, exterior, lower, upper)?,
        clamped,
    })
}

/// Values on the interior product quadrature grid over `Omega x Omega`.
///
/// A field may carry an exterior extension: a density `rho` on the tail rule
/// points, read as `phi(x, y) = rho(x) |x - y|^{-(n/p + s)(p - 1)}` for `x` in
/// `Omega`, `y` outside, and `phi(y, x) = -phi(x, y)`. This is the shape of a
/// nonlocal flux across the boundary. Without it the field is zero outside
/// `Omega x Omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductField {
    signature: GridSignature,
    values: Vec<f64>,
    exterior: Option<Vec<f64>>,
}

impl ProductField {
    pub fn new(disc: &Discretization, values: Vec<f64>) -> Result<Self> {
        Self::with_exterior(disc, values, None)
    }

    pub fn with_exterior(
        disc: &Discretization,
        values: Vec<f64>,
        exterior: Option<Vec<f64>>,
    ) -> Result<Self> {
        if values.len() != disc.grid.len() {
            return Err(invalid(format!(
                "expected {} grid values, got {}",
                disc.grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Evaluation("non-finite product field value".into()));
        }
        if let Some(ext) = &exterior {
            if ext.len() != disc.tail_line.len() {
                return Err(invalid(format!(
                    "expected {} exterior values, got {}",
                    disc.tail_line.len(),
                    ext.len()
                )));
            }
            if ext.iter().any(|v| !v.is_finite()) {
                return Err(LabError::Evaluation("non-finite exterior value".into()));
            }
        }
        Ok(Self {
            signature: disc.signature(),
            values,
            exterior,
        })
    }

    /// Samples `phi(x, y)` at every grid point; no exterior extension.
    pub fn sample(disc: &Discretization, phi: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let g = &disc.grid;
        let values = (0..g.len()).map(|k| phi(g.x[k], g.y[k])).collect();
        Self::new(disc, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn exterior(&self) -> Option<&[f64]> {
        self.exterior.as_deref()
    }

    pub fn signature(&self) -> &GridSignature {
        &self.signature
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            signature: self.signature,
            values: self.values.iter().map(|v| c * v).collect(),
            exterior: self
                .exterior
                .as_ref()
                .map(|e| e.iter().map(|v| c * v).collect()),
        }
    }

    pub(crate) fn ensure_on(&self, disc: &Discretization) -> Result<()> {
        if self.signature != disc.signature() {
            return Err(LabError::GridMismatch);
        }
        Ok(())
    }
}
