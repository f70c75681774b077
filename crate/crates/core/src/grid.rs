//! Closed Chebyshev grid with barycentric interpolation and Clenshaw-Curtis
//! quadrature.
//!
//! Nodes are stored in descending order, `x_j = cos(j pi / N)`, so that the
//! reflection `x -> -x` is the index permutation `j -> N - j`. The order `N`
//! is even, which puts the node `x_{N/2} = 0` on the grid.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{KsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevGrid {
    order: usize,
    nodes: Vec<f64>,
    bary_weights: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl ChebyshevGrid {
    /// Builds the grid of order `n` (`n + 1` nodes).
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(KsError::InvalidGridOrder(n));
        }
        let mut nodes = vec![0.0; n + 1];
        for j in 0..=n / 2 {
            // sin form keeps the nodes exactly antisymmetric
            let x = (PI * (n as f64 - 2.0 * j as f64) / (2.0 * n as f64)).sin();
            nodes[j] = x;
            nodes[n - j] = -x;
        }
        nodes[n / 2] = 0.0;

        let bary_weights = (0..=n)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();

        Ok(Self {
            order: n,
            nodes,
            bary_weights,
            quad_weights: clenshaw_curtis_weights(n),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn bary_weights(&self) -> &[f64] {
        &self.bary_weights
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Index of the midpoint node `x = 0`.
    pub fn mid_index(&self) -> usize {
        self.order / 2
    }

    /// Samples `f` at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    /// Barycentric interpolation of node values at `x`.
    pub fn interpolate_values(&self, values: &[f64], x: f64) -> Result<f64> {
        if values.len() != self.len() {
            return Err(KsError::DimensionMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        if !(-1.0..=1.0).contains(&x) {
            return Err(KsError::OutOfDomain(x));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&xj, &wj), &fj) in self.nodes.iter().zip(&self.bary_weights).zip(values) {
            let d = x - xj;
            if d == 0.0 {
                return Ok(fj);
            }
            let t = wj / d;
            num += t * fj;
            den += t;
        }
        Ok(num / den)
    }

    /// Row vector `r` such that `r . values` interpolates at `x`.
    pub fn interpolation_row(&self, x: f64, row: &mut [f64]) {
        debug_assert_eq!(row.len(), self.len());
        if let Some(j) = self.nodes.iter().position(|&xj| xj == x) {
            row.iter_mut().for_each(|r| *r = 0.0);
            row[j] = 1.0;
            return;
        }
        let mut den = 0.0;
        for ((r, &xj), &wj) in row.iter_mut().zip(&self.nodes).zip(&self.bary_weights) {
            *r = wj / (x - xj);
            den += *r;
        }
        row.iter_mut().for_each(|r| *r /= den);
    }

    /// Dense interpolation matrix from node values to `points`.
    pub fn interpolation_matrix(&self, points: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(points.len(), self.len());
        let mut row = vec![0.0; self.len()];
        for (i, &x) in points.iter().enumerate() {
            self.interpolation_row(x, &mut row);
            for (j, &r) in row.iter().enumerate() {
                m[(i, j)] = r;
            }
        }
        m
    }

    /// Chebyshev spectral differentiation matrix on the nodes.
    pub fn differentiation_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let x = &self.nodes;
        let c: Vec<f64> = (0..n)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n - 1 {
                    2.0 * s
                } else {
                    s
                }
            })
            .collect();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                if i != j {
                    let v = c[i] / c[j] / (x[i] - x[j]);
                    d[(i, j)] = v;
                    row_sum += v;
                }
            }
            d[(i, i)] = -row_sum;
        }
        d
    }

    /// Clenshaw-Curtis quadrature of node values.
    pub fn quad_values(&self, values: &[f64]) -> f64 {
        self.quad_weights.iter().zip(values).map(|(w, f)| w * f).sum()
    }

    /// Quadrature inner product of node values.
    pub fn inner_values(&self, a: &[f64], b: &[f64]) -> f64 {
        self.quad_weights
            .iter()
            .zip(a)
            .zip(b)
            .map(|((w, x), y)| w * x * y)
            .sum()
    }

    pub fn norm2_values(&self, a: &[f64]) -> f64 {
        self.inner_values(a, a).max(0.0).sqrt()
    }
}

/// Clenshaw-Curtis weights for the closed grid of order `n` via the explicit
/// cosine sum.
fn clenshaw_curtis_weights(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let mut w = vec![0.0; n + 1];
    w[0] = 1.0 / (nf * nf - 1.0);
    w[n] = w[0];
    for (j, wj) in w.iter_mut().enumerate().take(n).skip(1) {
        let theta = j as f64 * PI / nf;
        let mut v = 1.0;
        for k in 1..n / 2 {
            let kf = k as f64;
            v -= 2.0 * (2.0 * kf * theta).cos() / (4.0 * kf * kf - 1.0);
        }
        v -= (nf * theta).cos() / (nf * nf - 1.0);
        *wj = 2.0 * v / nf;
    }
    w
}

pub fn make_grid(n: usize) -> Result<Arc<ChebyshevGrid>> {
    ChebyshevGrid::new(n).map(Arc::new)
}

/// A function sampled on the nodes of a grid.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<ChebyshevGrid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<ChebyshevGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(KsError::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &Arc<ChebyshevGrid>) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &Arc<ChebyshevGrid>, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: grid.sample(f),
            grid: grid.clone(),
        }
    }

    pub fn grid(&self) -> &Arc<ChebyshevGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn interpolate(&self, x: f64) -> Result<f64> {
        self.grid.interpolate_values(&self.values, x)
    }

    pub fn quad(&self) -> f64 {
        self.grid.quad_values(&self.values)
    }

    pub fn inner(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self.grid.inner_values(&self.values, &other.values))
    }

    pub fn norm2(&self) -> f64 {
        self.grid.norm2_values(&self.values)
    }

    /// Largest absolute boundary value.
    pub fn boundary_defect(&self) -> f64 {
        self.values[0].abs().max(self.values[self.grid.order()].abs())
    }

    /// Resamples onto another grid by barycentric interpolation.
    pub fn resample(&self, target: &Arc<ChebyshevGrid>) -> Field {
        if Arc::ptr_eq(&self.grid, target) || *self.grid == **target {
            return Field {
                grid: target.clone(),
                values: self.values.clone(),
            };
        }
        let values = target
            .nodes()
            .iter()
            .map(|&x| {
                self.grid
                    .interpolate_values(&self.values, x)
                    .expect("grid nodes lie in [-1, 1]")
            })
            .collect();
        Field {
            grid: target.clone(),
            values,
        }
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn axpy(&self, a: f64, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        })
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(KsError::GridMismatch(self.grid.order(), other.grid.order()))
        }
    }
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.grid.order() == other.grid.order() && self.values == other.values
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.axpy(1.0, rhs).expect("grid mismatch in field addition")
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.axpy(-1.0, rhs).expect("grid mismatch in field subtraction")
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.scaled(rhs)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scaled(-1.0)
    }
}

pub fn interpolate(f: &Field, x: f64) -> Result<f64> {
    f.interpolate(x)
}

pub fn quad(f: &Field) -> f64 {
    f.quad()
}

pub fn inner(f: &Field, g: &Field) -> Result<f64> {
    f.inner(g)
}

pub fn norm2(f: &Field) -> f64 {
    f.norm2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn order_two_nodes_and_weights() {
        let g = ChebyshevGrid::new(2).unwrap();
        assert_eq!(g.nodes(), &[1.0, 0.0, -1.0]);
        // exactness on 1, x, x^2 gives (1/3, 4/3, 1/3)
        let w = g.quad_weights();
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_odd_and_small_orders() {
        assert!(ChebyshevGrid::new(7).is_err());
        assert!(ChebyshevGrid::new(0).is_err());
        assert!(ChebyshevGrid::new(1).is_err());
    }

    #[test]
    fn nodes_are_exactly_antisymmetric() {
        for n in [8, 32, 64] {
            let g = ChebyshevGrid::new(n).unwrap();
            for j in 0..=n {
                assert_eq!(g.nodes()[n - j], -g.nodes()[j]);
            }
            assert_eq!(g.nodes()[n / 2], 0.0);
            assert!(g.nodes().windows(2).all(|p| p[0] > p[1]));
        }
    }

    #[test]
    fn weights_sum_to_two_and_integrate_monomials() {
        for n in [8, 32, 64] {
            let g = ChebyshevGrid::new(n).unwrap();
            let s: f64 = g.quad_weights().iter().sum();
            assert_abs_diff_eq!(s, 2.0, epsilon = 1e-14);
            for p in 0..=n {
                let vals = g.sample(|x| x.powi(p as i32));
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert_abs_diff_eq!(g.quad_values(&vals), exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn interpolation_examples() {
        let g = make_grid(8).unwrap();
        let c = Field::from_fn(&g, |_| 2.5);
        assert_abs_diff_eq!(c.interpolate(0.77).unwrap(), 2.5, epsilon = 1e-14);
        let cube = Field::from_fn(&g, |x| x * x * x);
        assert_abs_diff_eq!(cube.interpolate(0.3).unwrap(), 0.027, epsilon = 1e-15);

        let g = make_grid(32).unwrap();
        let f = Field::from_fn(&g, |x| (PI * x / 2.0).cos());
        assert_abs_diff_eq!(
            f.interpolate(0.123).unwrap(),
            (0.123 * PI / 2.0).cos(),
            epsilon = 1e-12
        );
        assert!(f.interpolate(1.01).is_err());
        // exact at nodes
        for (j, &x) in g.nodes().iter().enumerate() {
            assert_eq!(f.interpolate(x).unwrap(), f.values()[j]);
        }
    }

    #[test]
    fn quadrature_examples() {
        let g = make_grid(32).unwrap();
        let cube = Field::from_fn(&g, |x| x.powi(3));
        assert_abs_diff_eq!(cube.quad(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(Field::from_fn(&g, |_| 1.0).quad(), 2.0, epsilon = 1e-14);
        let c2 = Field::from_fn(&g, |x| (PI * x / 2.0).cos().powi(2));
        assert_abs_diff_eq!(c2.quad(), 1.0, epsilon = 1e-12);
        // cos(6 pi x) already needs more than 33 nodes at this tolerance
        for k in 1..=5 {
            let f = Field::from_fn(&g, |x| (k as f64 * PI * x).cos());
            assert_abs_diff_eq!(f.quad(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn parity_orthogonality() {
        let g = make_grid(32).unwrap();
        let e = Field::from_fn(&g, |x| (PI * x / 2.0).cos());
        let o = Field::from_fn(&g, |x| (PI * x).sin());
        assert_abs_diff_eq!(e.inner(&o).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = Field::zeros(&make_grid(8).unwrap());
        let b = Field::zeros(&make_grid(16).unwrap());
        assert!(matches!(a.inner(&b), Err(KsError::GridMismatch(8, 16))));
    }

    #[test]
    fn differentiation_matrix_exact_on_polynomials() {
        let g = ChebyshevGrid::new(16).unwrap();
        let d = g.differentiation_matrix();
        let f = nalgebra::DVector::from_vec(g.sample(|x| x.powi(5) - 2.0 * x * x));
        let df = &d * f;
        for (j, &x) in g.nodes().iter().enumerate() {
            assert_abs_diff_eq!(df[j], 5.0 * x.powi(4) - 4.0 * x, epsilon = 1e-11);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn reproduces_polynomials(coeffs in proptest::collection::vec(-1.0f64..1.0, 17),
                                      pts in proptest::collection::vec(-1.0f64..1.0, 100)) {
                let g = ChebyshevGrid::new(16).unwrap();
                let p = |x: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
                let vals = g.sample(p);
                for x in pts {
                    let v = g.interpolate_values(&vals, x).unwrap();
                    prop_assert!((v - p(x)).abs() <= 1e-12);
                }
            }
        }
    }
}
