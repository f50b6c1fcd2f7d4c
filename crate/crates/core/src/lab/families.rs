//! Built-in coefficient sequences.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{sample_coefficient, Coefficient, Mesh};

/// Cells per oscillation period in the resolution rule.
pub const CELLS_PER_PERIOD: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SeparableOscillation,
    ProductCheckerboard,
    NonConvergingAlternator,
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::SeparableOscillation => "separable-oscillation",
            Family::ProductCheckerboard => "product-checkerboard",
            Family::NonConvergingAlternator => "non-converging-alternator",
            Family::Custom => "custom",
        })
    }
}

type Generator = Arc<dyn Fn(usize, &Mesh) -> Result<Coefficient> + Send + Sync>;
type LimitGenerator = Arc<dyn Fn(&Mesh) -> Result<Coefficient> + Send + Sync>;

/// `a_k` for `k = 1, 2, ...`, each on its own mesh, with the claimed weak-* limit.
#[derive(Clone)]
pub struct CoefficientSequence {
    family: Family,
    lower: f64,
    upper: f64,
    cells_base: usize,
    /// Whether the mesh grows with `k` (`max(base, 16 k)`) or stays at the base.
    k_dependent_mesh: bool,
    generator: Generator,
    limit: Option<LimitGenerator>,
    limit_name: String,
}

impl fmt::Debug for CoefficientSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSequence")
            .field("family", &self.family)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("cells_base", &self.cells_base)
            .field("limit", &self.limit_name)
            .finish()
    }
}

fn check_base(cells_base: usize) -> Result<()> {
    if cells_base < 2 {
        return Err(invalid(format!("base cell count must be at least 2, got {cells_base}")));
    }
    Ok(())
}

impl CoefficientSequence {
    /// Arbitrary sequence; `generator(k, mesh)` must stay within `[lower, upper]`.
    pub fn custom(
        lower: f64,
        upper: f64,
        cells_base: usize,
        generator: impl Fn(usize, &Mesh) -> Result<Coefficient> + Send + Sync + 'static,
    ) -> Result<Self> {
        check_base(cells_base)?;
        if !(lower > 0.0 && lower <= upper) {
            return Err(invalid(format!("need 0 < lower <= upper, got [{lower}, {upper}]")));
        }
        Ok(Self {
            family: Family::Custom,
            lower,
            upper,
            cells_base,
            k_dependent_mesh: true,
            generator: Arc::new(generator),
            limit: None,
            limit_name: "none".into(),
        })
    }

    /// `a_k = value` for every `k`, with limit `value`.
    pub fn constant(value: f64, cells_base: usize) -> Result<Self> {
        Self::custom(value, value, cells_base, move |_, m| Coefficient::constant(m, value))?
            .with_constant_limit(value)
    }

    pub fn separable_oscillation(mean: f64, amplitude: f64, cells_base: usize) -> Result<Self> {
        let lower = mean - amplitude.abs();
        if !(lower > 0.0) {
            return Err(invalid(format!(
                "mean - |amplitude| must be positive, got {mean} - {}",
                amplitude.abs()
            )));
        }
        let mut seq = Self::custom(lower, mean + amplitude.abs(), cells_base, move |k, m| {
            gen_separable_oscillation(k, mean, amplitude, m)
        })?
        .with_constant_limit(mean)?;
        seq.family = Family::SeparableOscillation;
        Ok(seq)
    }

    pub fn product_checkerboard(alpha: f64, beta: f64, cells_base: usize) -> Result<Self> {
        check_checkerboard(alpha, beta)?;
        let mut seq = Self::custom(alpha, beta, cells_base, move |k, m| {
            gen_product_checkerboard(k, alpha, beta, m)
        })?
        .with_constant_limit(0.5 * (alpha + beta))?;
        seq.family = Family::ProductCheckerboard;
        Ok(seq)
    }

    /// Replaces the claimed weak-* limit.
    pub fn with_claimed_limit(
        mut self,
        name: impl Into<String>,
        limit: impl Fn(&Mesh) -> Result<Coefficient> + Send + Sync + 'static,
    ) -> Self {
        self.limit = Some(Arc::new(limit));
        self.limit_name = name.into();
        self
    }

    pub fn with_constant_limit(self, value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(invalid(format!("limit value must be positive, got {value}")));
        }
        Ok(self.with_claimed_limit(format!("const({value})"), move |m| Coefficient::constant(m, value)))
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn limit_name(&self) -> &str {
        &self.limit_name
    }

    pub fn has_limit(&self) -> bool {
        self.limit.is_some()
    }

    /// Resolution rule: `max(base, 16 k)` rounded up to a multiple of `2 k`.
    pub fn n_cells_for(&self, k: usize) -> usize {
        if !self.k_dependent_mesh {
            return self.cells_base;
        }
        let n = self.cells_base.max(CELLS_PER_PERIOD * k);
        n.div_ceil(2 * k) * 2 * k
    }

    /// `a_k` on `mesh`, checked against the sequence bounds.
    pub fn coefficient(&self, k: usize, mesh: &Mesh) -> Result<Coefficient> {
        if k == 0 {
            return Err(invalid("sequence index k must be positive"));
        }
        let a = (self.generator)(k, mesh)?;
        a.with_bounds(self.lower, self.upper)
    }

    /// Claimed limit on `mesh`; it must lie in the same class.
    pub fn claimed_limit(&self, mesh: &Mesh) -> Result<Coefficient> {
        match &self.limit {
            None => Err(invalid(format!("sequence {} has no claimed limit", self.family))),
            Some(g) => g(mesh)?.with_bounds(self.lower, self.upper),
        }
    }
}

/// `a_k(x, y) = mean + amplitude sin(2 pi k x) sin(2 pi k y)` sampled at cell midpoints.
pub fn gen_separable_oscillation(k: usize, mean: f64, amplitude: f64, mesh: &Mesh) -> Result<Coefficient> {
    let lower = mean - amplitude.abs();
    if !(lower > 0.0) {
        return Err(invalid(format!(
            "mean - |amplitude| must be positive, got {mean} - {}",
            amplitude.abs()
        )));
    }
    let w = 2.0 * PI * k as f64;
    let sampled = sample_coefficient(
        |x, y| mean + amplitude * (w * x).sin() * (w * y).sin(),
        mean,
        mesh,
        lower,
        mean + amplitude.abs(),
    )?;
    Ok(sampled.coefficient)
}

fn check_checkerboard(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= beta && beta.is_finite()) {
        return Err(invalid(format!("need 0 < alpha <= beta, got alpha = {alpha}, beta = {beta}")));
    }
    Ok(())
}

/// `alpha` where `floor(2kx) + floor(2ky)` is even, `beta` elsewhere.
pub fn gen_product_checkerboard(k: usize, alpha: f64, beta: f64, mesh: &Mesh) -> Result<Coefficient> {
    check_checkerboard(alpha, beta)?;
    let n = mesh.n_cells();
    if k == 0 || !n.is_multiple_of(2 * k) {
        return Err(invalid(format!(
            "checkerboard with k = {k} needs a cell count divisible by {}, got {n}",
            2 * k
        )));
    }
    let stripe = n / (2 * k);
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            values.push(if (i / stripe + j / stripe).is_multiple_of(2) { alpha } else { beta });
        }
    }
    Coefficient::from_pair_values(mesh, values, 0.5 * (alpha + beta), alpha, beta)
}

pub const ALTERNATOR_ODD: f64 = 1.5;
pub const ALTERNATOR_EVEN: f64 = 2.5;

/// `a_k = 1.5` for odd `k` and `2.5` for even `k`, all on one fixed mesh; no claimed limit.
pub fn gen_non_converging_alternator(mesh: &Mesh) -> CoefficientSequence {
    CoefficientSequence {
        family: Family::NonConvergingAlternator,
        lower: ALTERNATOR_ODD,
        upper: ALTERNATOR_EVEN,
        cells_base: mesh.n_cells(),
        k_dependent_mesh: false,
        generator: Arc::new(|k, m| {
            Coefficient::constant(m, if k % 2 == 1 { ALTERNATOR_ODD } else { ALTERNATOR_EVEN })
        }),
        limit: None,
        limit_name: "none".into(),
    }
}
