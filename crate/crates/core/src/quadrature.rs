//! Product-grid quadrature over `(0,1) x (0,1)` for weakly singular two-point kernels.
//!
//! Separated cell pairs get a tensor Gauss-Legendre rule. The diagonal pair
//! `(i, i)` is integrated in `(x, x - y)` coordinates with the distance
//! geometrically graded toward zero, and touching pairs `(i, i +- 1)` are
//! graded toward their shared corner with L-shaped layers. No point lies on
//! the diagonal.
//!
//! Every point `(x, y)` has a mirror point `(y, x)` carrying bitwise identical
//! weight and kernel factor; the mirror of a block `(i, j)` is the block
//! `(j, i)` with swapped coordinates.

use std::num::NonZeroUsize;
use std::ops::Range;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{invalid, Result};
use crate::fields::{FracParams, Mesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureRule {
    /// Gauss points per cell per axis.
    pub points_per_cell: usize,
    /// Depth of the geometric grading on singular cell pairs.
    pub diagonal_levels: usize,
    /// Ratio between consecutive graded layers.
    pub grading_ratio: f64,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self {
            points_per_cell: 3,
            diagonal_levels: 6,
            grading_ratio: 0.5,
        }
    }
}

impl QuadratureRule {
    pub fn new(points_per_cell: usize, diagonal_levels: usize, grading_ratio: f64) -> Result<Self> {
        let rule = Self {
            points_per_cell,
            diagonal_levels,
            grading_ratio,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_cell < 2 {
            return Err(invalid(format!(
                "points_per_cell must be >= 2, got {}",
                self.points_per_cell
            )));
        }
        if self.diagonal_levels < 3 {
            return Err(invalid(format!(
                "diagonal_levels must be >= 3, got {}",
                self.diagonal_levels
            )));
        }
        if !(self.grading_ratio > 0.0 && self.grading_ratio < 1.0) {
            return Err(invalid(format!(
                "grading_ratio must lie in (0, 1), got {}",
                self.grading_ratio
            )));
        }
        Ok(())
    }

    /// Graded subintervals `[r^{l+1}, r^l]` of `[0, 1]`, innermost `[0, r^L]` last.
    fn layers(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.diagonal_levels + 1);
        let mut hi = 1.0;
        for _ in 0..self.diagonal_levels {
            let lo = hi * self.grading_ratio;
            out.push((lo, hi));
            hi = lo;
        }
        out.push((0.0, hi));
        out
    }
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`, ascending.
pub fn gauss_unit(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("at least one Gauss point"));
    let mut pts: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

fn gauss_on(unit: &[(f64, f64)], a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let len = b - a;
    unit.iter().map(move |&(t, w)| (a + len * t, len * w))
}

/// Point of a reference rule on a pair of unit cells. `dist` is the
/// separation `|x - y|` in units of the cell width, computed without
/// cancellation.
#[derive(Debug, Clone, Copy)]
struct RefPoint {
    xi: f64,
    eta: f64,
    w: f64,
    dist: f64,
}

/// Lower triangle `eta < xi` of the diagonal cell pair.
fn diagonal_template(rule: &QuadratureRule) -> Vec<RefPoint> {
    let g = gauss_unit(rule.points_per_cell);
    let mut out = Vec::new();
    for (lo, hi) in rule.layers() {
        for (r, wr) in gauss_on(&g, lo, hi) {
            for (xi, wx) in gauss_on(&g, r, 1.0) {
                out.push(RefPoint {
                    xi,
                    eta: xi - r,
                    w: wr * wx,
                    dist: r,
                });
            }
        }
    }
    out
}

/// `x` in cell `i`, `y` in cell `i + 1`; singular corner at `xi = 1, eta = 0`.
fn adjacent_template(rule: &QuadratureRule) -> Vec<RefPoint> {
    let g = gauss_unit(rule.points_per_cell);
    let mut rects: Vec<((f64, f64), (f64, f64))> = Vec::new();
    let layers = rule.layers();
    for &(lo, hi) in &layers[..rule.diagonal_levels] {
        rects.push(((lo, hi), (0.0, lo)));
        rects.push(((0.0, lo), (lo, hi)));
        rects.push(((lo, hi), (lo, hi)));
    }
    let (_, inner) = layers[rule.diagonal_levels];
    rects.push(((0.0, inner), (0.0, inner)));

    let mut out = Vec::new();
    for ((a0, a1), (b0, b1)) in rects {
        for (a, wa) in gauss_on(&g, a0, a1) {
            for (b, wb) in gauss_on(&g, b0, b1) {
                out.push(RefPoint {
                    xi: 1.0 - a,
                    eta: b,
                    w: wa * wb,
                    dist: a + b,
                });
            }
        }
    }
    out
}

/// Identifies the grid a product field was sampled on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSignature {
    pub n_cells: usize,
    pub rule: QuadratureRule,
    pub s: f64,
    pub p: f64,
}

/// Quadrature points over `Omega x Omega`, stored block by block in
/// row-major cell-pair order.
#[derive(Debug, Clone)]
pub struct ProductGrid {
    n_cells: usize,
    block_start: Vec<usize>,
    /// Local coordinate of `x` in its cell.
    pub xi: Vec<f64>,
    /// Local coordinate of `y` in its cell.
    pub eta: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub weight: Vec<f64>,
    /// `|x - y|^{-(n/p + s)}`, so that `D u = (u(x) - u(y)) * kernel`.
    pub kernel: Vec<f64>,
    /// Index of the point `(y, x)`.
    pub mirror: Vec<usize>,
    pub cell_x: Vec<u32>,
    pub cell_y: Vec<u32>,
}

impl ProductGrid {
    pub fn new(mesh: &Mesh, params: &FracParams, rule: &QuadratureRule) -> Result<Self> {
        rule.validate()?;
        let n = mesh.n_cells();
        let h = mesh.cell_width();
        let e = params.grad_exponent;
        let diag = diagonal_template(rule);
        let adj = adjacent_template(rule);
        let g = gauss_unit(rule.points_per_cell);

        let mut grid = ProductGrid {
            n_cells: n,
            block_start: Vec::with_capacity(n * n + 1),
            xi: Vec::new(),
            eta: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
            weight: Vec::new(),
            kernel: Vec::new(),
            mirror: Vec::new(),
            cell_x: Vec::new(),
            cell_y: Vec::new(),
        };
        let nodes = mesh.nodes();
        let h2 = h * h;
        for i in 0..n {
            for j in 0..n {
                let start = grid.xi.len();
                grid.block_start.push(start);
                if i > j {
                    // copy of the mirrored block (j, i)
                    let src = grid.block_range(j, i);
                    let offset = start;
                    for (k, idx) in src.clone().enumerate() {
                        grid.xi.push(grid.eta[idx]);
                        grid.eta.push(grid.xi[idx]);
                        grid.x.push(grid.y[idx]);
                        grid.y.push(grid.x[idx]);
                        grid.weight.push(grid.weight[idx]);
                        grid.kernel.push(grid.kernel[idx]);
                        grid.mirror.push(src.start + k);
                        grid.mirror[idx] = offset + k;
                        grid.cell_x.push(i as u32);
                        grid.cell_y.push(j as u32);
                    }
                    continue;
                }
                let push = |grid: &mut ProductGrid, p: RefPoint| {
                    grid.xi.push(p.xi);
                    grid.eta.push(p.eta);
                    grid.x.push(nodes[i] + h * p.xi);
                    grid.y.push(nodes[j] + h * p.eta);
                    grid.weight.push(h2 * p.w);
                    grid.kernel.push((h * p.dist).powf(-e));
                    grid.mirror.push(usize::MAX);
                    grid.cell_x.push(i as u32);
                    grid.cell_y.push(j as u32);
                };
                match j - i {
                    0 => {
                        for &p in &diag {
                            push(&mut grid, p);
                        }
                        let m = diag.len();
                        for k in 0..m {
                            let idx = start + k;
                            grid.xi.push(grid.eta[idx]);
                            grid.eta.push(grid.xi[idx]);
                            grid.x.push(grid.y[idx]);
                            grid.y.push(grid.x[idx]);
                            grid.weight.push(grid.weight[idx]);
                            grid.kernel.push(grid.kernel[idx]);
                            grid.mirror.push(idx);
                            grid.mirror[idx] = start + m + k;
                            grid.cell_x.push(i as u32);
                            grid.cell_y.push(j as u32);
                        }
                    }
                    1 => {
                        for &p in &adj {
                            push(&mut grid, p);
                        }
                    }
                    d => {
                        let d = d as f64;
                        for &(xi, wx) in &g {
                            for &(eta, wy) in &g {
                                push(
                                    &mut grid,
                                    RefPoint {
                                        xi,
                                        eta,
                                        w: wx * wy,
                                        dist: d + eta - xi,
                                    },
                                );
                            }
                        }
                    }
                }
            }
        }
        grid.block_start.push(grid.xi.len());
        debug_assert!(grid.mirror.iter().all(|&m| m != usize::MAX));
        Ok(grid)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn block_range(&self, i: usize, j: usize) -> Range<usize> {
        let b = i * self.n_cells + j;
        self.block_start[b]..self.block_start[b + 1]
    }

    /// Number of cell-pair blocks.
    pub fn n_blocks(&self) -> usize {
        self.n_cells * self.n_cells
    }

    /// Cell pair and point range of block `b`.
    pub fn block(&self, b: usize) -> (usize, usize, Range<usize>) {
        (
            b / self.n_cells,
            b % self.n_cells,
            self.block_start[b]..self.block_start[b + 1],
        )
    }
}

/// One-dimensional rule over `(0, 1)`.
#[derive(Debug, Clone)]
pub struct LineRule {
    pub cell: Vec<usize>,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub weight: Vec<f64>,
}

impl LineRule {
    /// Plain per-cell Gauss rule.
    pub fn gauss(mesh: &Mesh, points_per_cell: usize) -> Self {
        let g = gauss_unit(points_per_cell);
        let mut rule = Self::empty();
        for cell in 0..mesh.n_cells() {
            for &(t, w) in &g {
                rule.push(mesh, cell, t, w);
            }
        }
        rule
    }

    /// Per-cell Gauss rule with the two boundary cells graded toward the boundary.
    pub fn boundary_graded(mesh: &Mesh, q: &QuadratureRule) -> Self {
        let g = gauss_unit(q.points_per_cell);
        let n = mesh.n_cells();
        let mut rule = Self::empty();
        for cell in 0..n {
            if cell == 0 || cell == n - 1 {
                let mut local: Vec<(f64, f64)> = Vec::new();
                for (lo, hi) in q.layers() {
                    local.extend(gauss_on(&g, lo, hi));
                }
                if cell == n - 1 {
                    for p in local.iter_mut() {
                        p.0 = 1.0 - p.0;
                    }
                }
                local.sort_by(|a, b| a.0.total_cmp(&b.0));
                for (t, w) in local {
                    rule.push(mesh, cell, t, w);
                }
            } else {
                for &(t, w) in &g {
                    rule.push(mesh, cell, t, w);
                }
            }
        }
        rule
    }

    fn empty() -> Self {
        Self {
            cell: Vec::new(),
            t: Vec::new(),
            x: Vec::new(),
            weight: Vec::new(),
        }
    }

    fn push(&mut self, mesh: &Mesh, cell: usize, t: f64, w: f64) {
        self.cell.push(cell);
        self.t.push(t);
        self.x.push(mesh.nodes()[cell] + mesh.cell_width() * t);
        self.weight.push(mesh.cell_width() * w);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Quadrature of `g` over `(0, 1)` in fixed point order.
    pub fn integrate(&self, mut g: impl FnMut(usize, f64) -> f64) -> f64 {
        (0..self.len()).map(|k| self.weight[k] * g(k, self.x[k])).sum()
    }
}

/// Everything needed to evaluate discrete energies on one mesh: the product
/// grid over `Omega x Omega`, the load rule, and the exterior-tail rule with
/// its closed-form tail weights.
#[derive(Debug, Clone)]
pub struct Discretization {
    mesh: Mesh,
    params: FracParams,
    rule: QuadratureRule,
    pub grid: ProductGrid,
    pub load_line: LineRule,
    pub tail_line: LineRule,
    /// `tail_weight(x)` at every point of `tail_line`.
    pub tail: Vec<f64>,
}

impl Discretization {
    pub fn new(mesh: &Mesh, params: FracParams, rule: QuadratureRule) -> Result<Self> {
        let grid = ProductGrid::new(mesh, &params, &rule)?;
        let load_line = LineRule::gauss(mesh, rule.points_per_cell);
        let tail_line = LineRule::boundary_graded(mesh, &rule);
        let tail = tail_line
            .x
            .iter()
            .map(|&x| crate::calculus::tail_weight(x, &params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mesh: mesh.clone(),
            params,
            rule,
            grid,
            load_line,
            tail_line,
            tail,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn params(&self) -> &FracParams {
        &self.params
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn signature(&self) -> GridSignature {
        GridSignature {
            n_cells: self.mesh.n_cells(),
            rule: self.rule,
            s: self.params.s,
            p: self.params.p,
        }
    }
}
