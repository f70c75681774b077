//! Green's function of the implicit step operator
//! `L = 1 + h d^2/dx^2 + h nu d^4/dx^4` on `[-1, 1]` with `u = u_xx = 0` at
//! both ends, assembled into dense convolution tables on a Chebyshev grid.
//!
//! The symbol factors as `h nu (s^2 - r1)(s^2 - r2)`, and because every
//! factor preserves the boundary conditions the inverse splits into partial
//! fractions of second-order Dirichlet resolvents:
//!
//! ```text
//! G = (g_{r1} - g_{r2}) / (h nu (r1 - r2)),
//! g_r(x, xi) = -sinh(q(1 + x<)) sinh(q(1 - x>)) / (q sinh 2q),   q^2 = r.
//! ```
//!
//! Each `g_r` vanishes with its second derivative at `x = ±1`, and the
//! combination is continuous with two derivatives across `x = xi` and jumps
//! by `1/(h nu)` in the third. Fourth derivatives follow from
//! `d^2 g_r = r g_r + delta`, so the `D^4 G` and `D^4 d_xi G` tables carry a
//! local term next to the smooth kernel.
//!
//! The tables act on the `xi` variable in the form that appears in the
//! time step: `K1` and `K5` integrate `d_xi G` against the source (after
//! moving the derivative of the nonlinearity onto the kernel).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{KsError, Result};
use crate::grid::{ChebyshevGrid, Field};

/// Time step and viscosity of the implicit operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorParams {
    pub h: f64,
    pub nu: f64,
}

impl OperatorParams {
    pub fn new(h: f64, nu: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1e-2) {
            return Err(KsError::InvalidParams { h, nu, reason: "h must lie in (0, 1e-2]" });
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(KsError::InvalidParams { h, nu, reason: "nu must lie in (0, 1]" });
        }
        Ok(Self { h, nu })
    }

    /// Fractional closing steps may exceed the nominal step bound.
    pub(crate) fn fractional(h: f64, nu: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 2e-2 && nu > 0.0 && nu <= 1.0) {
            return Err(KsError::InvalidParams { h, nu, reason: "fractional step out of range" });
        }
        Ok(Self { h, nu })
    }

    /// Eigenvalue of `L` on `sin(k pi x)` / `cos(k pi x)`.
    pub fn symbol(&self, k: f64) -> f64 {
        let a = (k * PI).powi(2);
        1.0 - self.h * a + self.h * self.nu * a * a
    }
}

/// Roots of `h nu s^4 + h s^2 + 1 = 0`, ordered `[q1, -q1, q2, -q2]` with
/// `q1^2 = r1`, `q2^2 = r2` and `Re q >= 0`.
pub fn char_roots(p: OperatorParams) -> [Complex64; 4] {
    let (r1, r2) = quadratic_roots(p);
    let q1 = r1.sqrt();
    let q2 = r2.sqrt();
    [q1, -q1, q2, -q2]
}

fn quadratic_roots(p: OperatorParams) -> (Complex64, Complex64) {
    let a = p.h * p.nu;
    let disc = Complex64::new(p.h * p.h - 4.0 * a, 0.0).sqrt();
    let r1 = (Complex64::new(-p.h, 0.0) + disc) / (2.0 * a);
    let r2 = (Complex64::new(-p.h, 0.0) - disc) / (2.0 * a);
    (r1, r2)
}

/// One second-order Dirichlet resolvent `(d^2 - q^2)^{-1}`.
#[derive(Clone, Copy)]
struct Resolvent {
    q: Complex64,
    inv_den: Complex64,
}

impl Resolvent {
    fn new(q: Complex64) -> Option<Self> {
        let den = 2.0 * (1.0 - (-4.0 * q).exp());
        if den.norm() < 1e-12 {
            return None;
        }
        Some(Self { q, inv_den: 1.0 / den })
    }

    /// Returns `(g, d_xi g)` at `(x, xi)`. `x_above` selects the branch
    /// `x >= xi`, which matters only on the diagonal.
    fn eval(&self, x: f64, xi: f64, x_above: bool) -> (Complex64, Complex64) {
        let q = self.q;
        let (lo, hi) = if x_above { (xi, x) } else { (x, xi) };
        let a = q * (1.0 + lo);
        let b = q * (1.0 - hi);
        let e = (a + b - 2.0 * q).exp() * self.inv_den;
        let ea = (-2.0 * a).exp();
        let eb = (-2.0 * b).exp();
        let g = -e * (1.0 - ea) * (1.0 - eb) / q;
        let dxi = if x_above {
            -e * (1.0 + ea) * (1.0 - eb)
        } else {
            e * (1.0 - ea) * (1.0 + eb)
        };
        (g, dxi)
    }
}

/// Green's function kernels at a point pair, without the local terms.
struct Kernel {
    parts: [(Resolvent, Complex64, Complex64); 2],
}

#[derive(Default, Clone, Copy)]
struct KernelValues {
    g: f64,
    dxi_g: f64,
    s4: f64,
    dxi_s4: f64,
}

impl Kernel {
    fn new(p: OperatorParams) -> Result<Self> {
        let (r1, r2) = quadratic_roots(p);
        let diff = r1 - r2;
        if diff.norm() <= 1e-10 * r1.norm() {
            return Err(KsError::SingularOperator { h: p.h, nu: p.nu });
        }
        let c1 = 1.0 / (p.h * p.nu * diff);
        let singular = || KsError::SingularOperator { h: p.h, nu: p.nu };
        let g1 = Resolvent::new(r1.sqrt()).ok_or_else(singular)?;
        let g2 = Resolvent::new(r2.sqrt()).ok_or_else(singular)?;
        Ok(Self { parts: [(g1, c1, r1), (g2, -c1, r2)] })
    }

    fn eval(&self, x: f64, xi: f64, x_above: bool) -> KernelValues {
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for (res, c, r) in &self.parts {
            let (g, d) = res.eval(x, xi, x_above);
            let r2 = r * r;
            out[0] += c * g;
            out[1] += c * d;
            out[2] += c * r2 * g;
            out[3] += c * r2 * d;
        }
        KernelValues { g: out[0].re, dxi_g: out[1].re, s4: out[2].re, dxi_s4: out[3].re }
    }
}

/// Precomputed convolution matrices for one `(grid, h, nu)`.
///
/// With quadrature weights folded in, for node values `f`:
/// `K0 f ~ G * f`, `K1 f ~ (d_xi G) * f`, `K4 f ~ (D^4 G) * f`,
/// `K5 f ~ (D^4 d_xi G) * f`.
#[derive(Debug, Clone)]
pub struct GreensTables {
    pub params: OperatorParams,
    grid: Arc<ChebyshevGrid>,
    pub k0: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    pub k4: DMatrix<f64>,
    pub k5: DMatrix<f64>,
}

impl GreensTables {
    pub fn grid(&self) -> &Arc<ChebyshevGrid> {
        &self.grid
    }
}

/// Order of the Clenshaw-Curtis rule used on each side of the kernel kink.
fn sub_order(n: usize) -> usize {
    (2 * n).max(96)
}

pub fn assemble_tables(grid: &Arc<ChebyshevGrid>, p: OperatorParams) -> Result<GreensTables> {
    let kernel = Kernel::new(p)?;
    let n1 = grid.len();
    let sub = ChebyshevGrid::new(sub_order(grid.order()))?;
    let (t, tw) = (sub.nodes(), sub.quad_weights());

    let mut k0 = DMatrix::zeros(n1, n1);
    let mut k1 = DMatrix::zeros(n1, n1);
    let mut k4 = DMatrix::zeros(n1, n1);
    let mut k5 = DMatrix::zeros(n1, n1);
    let mut row = vec![0.0; n1];

    for (i, &x) in grid.nodes().iter().enumerate() {
        // left piece: xi in [-1, x], right piece: xi in [x, 1]
        for (lo, hi, x_above) in [(-1.0, x, true), (x, 1.0, false)] {
            let half = 0.5 * (hi - lo);
            if half <= 0.0 {
                continue;
            }
            let mid = 0.5 * (hi + lo);
            for (&tm, &wm) in t.iter().zip(tw) {
                // pin the endpoints so they hit grid nodes exactly
                let xi = if tm == 1.0 {
                    hi
                } else if tm == -1.0 {
                    lo
                } else {
                    mid + half * tm
                };
                let kv = kernel.eval(x, xi, x_above);
                let w = wm * half;
                grid.interpolation_row(xi, &mut row);
                let (a0, a1, a4, a5) = (w * kv.g, w * kv.dxi_g, w * kv.s4, w * kv.dxi_s4);
                for (j, &rj) in row.iter().enumerate() {
                    if rj != 0.0 {
                        k0[(i, j)] += a0 * rj;
                        k1[(i, j)] += a1 * rj;
                        k4[(i, j)] += a4 * rj;
                        k5[(i, j)] += a5 * rj;
                    }
                }
            }
        }
    }

    let local = 1.0 / (p.h * p.nu);
    let d = grid.differentiation_matrix();
    for i in 0..n1 {
        k4[(i, i)] += local;
    }
    k5 -= d * local;
    // boundary rows of the solution operators vanish identically
    for i in [0, n1 - 1] {
        for j in 0..n1 {
            k0[(i, j)] = 0.0;
            k1[(i, j)] = 0.0;
        }
    }

    Ok(GreensTables { params: p, grid: grid.clone(), k0, k1, k4, k5 })
}

/// Matrix-vector product of a kernel table with node values.
pub fn apply_values(k: &DMatrix<f64>, f: &[f64]) -> Result<Vec<f64>> {
    if k.ncols() != f.len() {
        return Err(KsError::DimensionMismatch { expected: k.ncols(), got: f.len() });
    }
    let mut out = vec![0.0; k.nrows()];
    matvec_into(k, f, &mut out);
    Ok(out)
}

pub fn apply(k: &DMatrix<f64>, f: &Field) -> Result<Field> {
    let v = apply_values(k, f.values())?;
    Field::new(f.grid().clone(), v)
}

/// `out = k * f`, sizes checked by the caller.
pub(crate) fn matvec_into(k: &DMatrix<f64>, f: &[f64], out: &mut [f64]) {
    let fv = nalgebra::DVectorView::from_slice(f, f.len());
    let mut ov = nalgebra::DVectorViewMut::from_slice(out, k.nrows());
    ov.gemv(1.0, k, &fv, 0.0);
}

/// `out += a * k * f`.
pub(crate) fn matvec_acc(k: &DMatrix<f64>, a: f64, f: &[f64], out: &mut [f64]) {
    let fv = nalgebra::DVectorView::from_slice(f, f.len());
    let mut ov = nalgebra::DVectorViewMut::from_slice(out, k.nrows());
    ov.gemv(a, k, &fv, 1.0);
}

/// `h nu D^4 + h D^2 + 1` applied by spectral differentiation; used as the
/// independent check that the tables invert `L`.
pub fn apply_operator_spectral(grid: &ChebyshevGrid, p: OperatorParams, u: &[f64]) -> Vec<f64> {
    let d = grid.differentiation_matrix();
    let d2 = &d * &d;
    let u = DVector::from_column_slice(u);
    let uxx = &d2 * &u;
    let u4 = &d2 * &uxx;
    (0..u.len()).map(|i| u[i] + p.h * uxx[i] + p.h * p.nu * u4[i]).collect()
}
