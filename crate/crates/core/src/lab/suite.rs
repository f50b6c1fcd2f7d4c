//! Finite families of test functions that observe weak and weak-* convergence.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Centres of the compactly supported bumps among the coefficient tests.
const BUMPS: [(f64, f64); 3] = [(0.3, 0.3), (0.7, 0.4), (0.5, 0.78)];
const BUMP_RADIUS: f64 = 0.18;

/// `exp(1 - 1 / (1 - r^2 / R^2))` inside the disc of radius `R`, zero outside.
fn bump(x: f64, y: f64, (cx, cy): (f64, f64)) -> f64 {
    let q = ((x - cx).powi(2) + (y - cy).powi(2)) / (BUMP_RADIUS * BUMP_RADIUS);
    if q >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - q)).exp()
    }
}

/// State tests `sin(j pi x)`; product tests `cos(m pi x) cos(m pi y)`,
/// `sin(m pi (x - y))` and the antisymmetrized mixed-frequency products
/// `(sin(m pi x) cos((m+1) pi y) - cos((m+1) pi x) sin(m pi y)) / 2`;
/// coefficient tests made of low-order polynomials and smooth bumps
/// supported inside the unit square. Every function is bounded by 1 there.
///
/// The mixed family is the one that sees fluxes of problems symmetric under
/// `x -> 1 - x`: such fluxes are odd under swapping `x` and `y` and even
/// under the point reflection, which the other two families are not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestSuite {
    pub n_states: usize,
    pub n_products: usize,
}

impl Default for TestSuite {
    fn default() -> Self {
        Self {
            n_states: 8,
            n_products: 8,
        }
    }
}

impl TestSuite {
    pub fn new(n_states: usize, n_products: usize) -> Result<Self> {
        if n_states < 4 || n_products < 4 {
            return Err(invalid(format!(
                "test suite needs at least 4 state and product tests, got {n_states} and {n_products}"
            )));
        }
        Ok(Self { n_states, n_products })
    }

    /// `v_j(x) = sin(j pi x)`, `j = 1..=J`.
    pub fn state_test(&self, j: usize, x: f64) -> f64 {
        (j as f64 * PI * x).sin()
    }

    pub fn n_product_tests(&self) -> usize {
        3 * self.n_products
    }

    /// Index `3 (m - 1) + kind` selects frequency `m` and one of the three kinds.
    pub fn product_test(&self, idx: usize, x: f64, y: f64) -> f64 {
        let m = (idx / 3 + 1) as f64;
        match idx % 3 {
            0 => (m * PI * x).cos() * (m * PI * y).cos(),
            1 => (m * PI * (x - y)).sin(),
            _ => {
                let n = m + 1.0;
                0.5 * ((m * PI * x).sin() * (n * PI * y).cos() - (n * PI * x).cos() * (m * PI * y).sin())
            }
        }
    }

    pub fn n_coefficient_tests(&self) -> usize {
        5 + BUMPS.len()
    }

    pub fn coefficient_test(&self, r: usize, x: f64, y: f64) -> f64 {
        match r {
            0 => 1.0,
            1 => x,
            2 => y,
            3 => x * y,
            4 => 0.5 * (x * x + y * y),
            _ => bump(x, y, BUMPS[r - 5]),
        }
    }

    /// Windows for the div-curl check: the bumps, compactly supported in the open square.
    pub fn windows(&self) -> Vec<usize> {
        (5..self.n_coefficient_tests()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_tests_bounded_by_one() {
        let s = TestSuite::default();
        for a in 0..=20 {
            for b in 0..=20 {
                let (x, y) = (a as f64 / 20.0, b as f64 / 20.0);
                for r in 0..s.n_coefficient_tests() {
                    assert!(s.coefficient_test(r, x, y).abs() <= 1.0);
                }
                for m in 0..s.n_product_tests() {
                    assert!(s.product_test(m, x, y).abs() <= 1.0 + 1e-15);
                }
            }
            for j in 1..=s.n_states {
                assert!(s.state_test(j, a as f64 / 20.0).abs() <= 1.0);
            }
        }
        assert!(TestSuite::new(3, 8).is_err());
        for r in s.windows() {
            for (x, y) in [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0)] {
                assert_eq!(s.coefficient_test(r, x, y), 0.0);
            }
        }
    }
}
