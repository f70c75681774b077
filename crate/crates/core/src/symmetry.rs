//! Reflection symmetry, kernel functions and the odd extension to the
//! doubled periodic domain.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::grid::{ChebyshevGrid, Field};
use crate::stepper::{fmt_num, Propagator};

/// Default relative tolerance for symmetry classification.
pub const CLASSIFY_TOL: f64 = 1e-6;

/// Default half-resolution of the extension grid (`4M` samples on `[-2, 2)`).
pub const EXTENSION_M: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// Normalized kernel function `cos((2n-1) pi x/2)` (even) or `sin(n pi x)`
/// (odd).
#[derive(Debug, Clone)]
pub struct KernelFunction {
    pub n: usize,
    pub parity: Parity,
    pub values: Field,
}

impl KernelFunction {
    pub fn new(grid: &Arc<ChebyshevGrid>, n: usize, parity: Parity) -> Result<Self> {
        if n == 0 {
            return Err(KsError::Invalid("kernel index starts at 1".into()));
        }
        let wave = Self::wave_number_of(n, parity) * PI;
        let values = match parity {
            Parity::Even => Field::from_fn(grid, |x| (wave * x).cos()),
            Parity::Odd => Field::from_fn(grid, |x| (wave * x).sin()),
        };
        Ok(Self { n, parity, values })
    }

    fn wave_number_of(n: usize, parity: Parity) -> f64 {
        match parity {
            Parity::Even => n as f64 - 0.5,
            Parity::Odd => n as f64,
        }
    }

    /// Wave number `k`, so the function is `cos(k pi x)` or `sin(k pi x)`.
    pub fn wave_number(&self) -> f64 {
        Self::wave_number_of(self.n, self.parity)
    }

    /// `beta = (2n - 1) pi / 2` for the even family, `n pi` for the odd one.
    pub fn beta(&self) -> f64 {
        self.wave_number() * PI
    }
}

/// `kappa u(x) = -u(-x)`, an exact index permutation on the grid.
pub fn kappa(f: &Field) -> Field {
    let v: Vec<f64> = f.values().iter().rev().map(|x| -x).collect();
    Field::new(f.grid().clone(), v).expect("same length")
}

pub(crate) fn kappa_values(v: &[f64]) -> Vec<f64> {
    v.iter().rev().map(|x| -x).collect()
}

/// Samples of the odd extension on the uniform periodic grid of `[-2, 2)`.
#[derive(Debug, Clone)]
pub struct ExtendedField {
    pub m: usize,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
}

impl ExtendedField {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,u")?;
        for (x, u) in self.x.iter().zip(&self.values) {
            writeln!(out, "{},{}", fmt_num(*x), fmt_num(*u))?;
        }
        Ok(())
    }
}

/// Extends `f` oddly about `x = ±1` to the doubled domain and samples it on
/// `4m` uniform points.
pub fn extend_periodic(f: &Field, m: usize) -> Result<ExtendedField> {
    if f.boundary_defect() > 1e-8 {
        return Err(KsError::BoundaryViolation(f.boundary_defect()));
    }
    if m == 0 {
        return Err(KsError::Invalid("extension resolution must be positive".into()));
    }
    let total = 4 * m;
    let mut x = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    for k in 0..total {
        let xk = -2.0 + k as f64 / m as f64;
        let v = if xk < -1.0 {
            -f.interpolate((-2.0 - xk).clamp(-1.0, 1.0))?
        } else if xk <= 1.0 {
            f.interpolate(xk.clamp(-1.0, 1.0))?
        } else {
            -f.interpolate((2.0 - xk).clamp(-1.0, 1.0))?
        };
        x.push(xk);
        values.push(v);
    }
    Ok(ExtendedField { m, x, values })
}

/// Spectral derivatives of periodic samples on a domain of length 4.
fn fourier_derivatives(values: &[f64], orders: &[u32]) -> Vec<Vec<f64>> {
    let n = values.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spec: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut spec);
    orders
        .iter()
        .map(|&p| {
            let mut d: Vec<Complex64> = spec
                .iter()
                .enumerate()
                .map(|(j, &c)| {
                    let signed = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                    if (p % 2 == 1 && j == n / 2) || 3 * signed.abs() as usize > n {
                        return Complex64::new(0.0, 0.0);
                    }
                    let k = 2.0 * PI * signed / 4.0;
                    c * Complex64::new(0.0, k).powu(p)
                })
                .collect();
            inv.process(&mut d);
            d.iter().map(|c| c.re / n as f64).collect()
        })
        .collect()
}

/// Sup norm of `u u_x + u_xx + nu u_xxxx` by Fourier differentiation.
/// Derivatives keep wave numbers up to two thirds of Nyquist; beyond that
/// the samples carry only round-off, which `k^4` would amplify.
pub fn periodic_residual(e: &ExtendedField, nu: f64) -> Result<f64> {
    let n = e.values.len();
    if n < 256 || !n.is_power_of_two() {
        return Err(KsError::Invalid(format!("extension grid of {n} points must be a power of two >= 256")));
    }
    let d = fourier_derivatives(&e.values, &[1, 2, 4]);
    Ok(e.values
        .iter()
        .enumerate()
        .map(|(i, &u)| (u * d[0][i] + d[1][i] + nu * d[2][i]).abs())
        .fold(0.0, f64::max))
}

pub fn project_kernel(f: &Field, k: &KernelFunction) -> Result<f64> {
    f.inner(&k.values)
}

/// Sum of projections onto the even and odd kernel functions with `n = 1, 2`.
pub fn diagram_coord(f: &Field) -> f64 {
    let grid = f.grid();
    [1, 2]
        .iter()
        .flat_map(|&n| [Parity::Even, Parity::Odd].map(move |p| (n, p)))
        .map(|(n, p)| {
            let k = KernelFunction::new(grid, n, p).expect("n >= 1");
            project_kernel(f, &k).expect("same grid")
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryClass {
    Fixed,
    Anti,
    Generic,
}

impl SymmetryClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            SymmetryClass::Fixed => "fixed",
            SymmetryClass::Anti => "anti",
            SymmetryClass::Generic => "generic",
        }
    }
}

pub fn classify_kappa(f: &Field, tol: f64) -> SymmetryClass {
    classify_values(f.grid(), f.values(), tol)
}

pub(crate) fn classify_values(grid: &ChebyshevGrid, v: &[f64], tol: f64) -> SymmetryClass {
    let norm = grid.norm2_values(v);
    if norm == 0.0 {
        return SymmetryClass::Fixed;
    }
    let k = kappa_values(v);
    let minus: Vec<f64> = k.iter().zip(v).map(|(a, b)| a - b).collect();
    if grid.norm2_values(&minus) <= tol * norm {
        return SymmetryClass::Fixed;
    }
    let plus: Vec<f64> = k.iter().zip(v).map(|(a, b)| a + b).collect();
    if grid.norm2_values(&plus) <= tol * norm {
        return SymmetryClass::Anti;
    }
    SymmetryClass::Generic
}

/// Relative defect `|phi(u0, P/2) - kappa u0| / |u0|`.
pub fn shift_reflect_defect(prop: &Propagator, u0: &[f64], period: f64) -> Result<f64> {
    let grid = prop.grid();
    let half = prop.flow_values(u0, 0.5 * period)?;
    let k = kappa_values(u0);
    let d: Vec<f64> = half.iter().zip(&k).map(|(a, b)| a - b).collect();
    let n = grid.norm2_values(u0);
    Ok(if n == 0.0 { grid.norm2_values(&d) } else { grid.norm2_values(&d) / n })
}

/// Whether a half-period shift followed by `kappa` maps the orbit to itself.
pub fn shift_reflect_check(u0: &Field, period: f64, nu: f64, h: f64, tol: f64) -> Result<bool> {
    let prop = Propagator::new(u0.grid(), nu, h)?;
    Ok(shift_reflect_defect(&prop, u0.values(), period)? <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::stepper::flow;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_functions_are_normalized() {
        let g = make_grid(32).unwrap();
        for n in 1..=2 {
            for p in [Parity::Even, Parity::Odd] {
                let k = KernelFunction::new(&g, n, p).unwrap();
                assert_abs_diff_eq!(k.values.inner(&k.values).unwrap(), 1.0, epsilon = 1e-12);
                assert!(k.values.boundary_defect() < 1e-15);
            }
        }
        let e = KernelFunction::new(&g, 2, Parity::Even).unwrap();
        assert_abs_diff_eq!(e.beta(), 1.5 * PI);
    }

    #[test]
    fn kappa_examples() {
        let g = make_grid(16).unwrap();
        let s = KernelFunction::new(&g, 2, Parity::Odd).unwrap().values;
        assert_eq!(kappa(&s).values(), s.values());
        let c = KernelFunction::new(&g, 1, Parity::Even).unwrap().values;
        let kc = kappa(&c);
        for j in 0..17 {
            assert_eq!(kc.values()[j], -c.values()[j]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = Field::new(g.clone(), (0..17).map(|_| rng.gen::<f64>()).collect()).unwrap();
        assert_eq!(kappa(&kappa(&r)).values(), r.values());
    }

    #[test]
    fn classification_examples() {
        let g = make_grid(32).unwrap();
        let o = KernelFunction::new(&g, 1, Parity::Odd).unwrap().values;
        let e = KernelFunction::new(&g, 1, Parity::Even).unwrap().values;
        assert_eq!(classify_kappa(&o, CLASSIFY_TOL), SymmetryClass::Fixed);
        assert_eq!(classify_kappa(&e, CLASSIFY_TOL), SymmetryClass::Anti);
        assert_eq!(classify_kappa(&(&e + &o), CLASSIFY_TOL), SymmetryClass::Generic);
        assert_eq!(classify_kappa(&Field::zeros(&g), CLASSIFY_TOL), SymmetryClass::Fixed);
    }

    #[test]
    fn projections() {
        let g = make_grid(32).unwrap();
        let e1 = KernelFunction::new(&g, 1, Parity::Even).unwrap();
        let o1 = KernelFunction::new(&g, 1, Parity::Odd).unwrap();
        assert_abs_diff_eq!(project_kernel(&e1.values, &e1).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(project_kernel(&e1.values, &o1).unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(diagram_coord(&Field::zeros(&g)), 0.0);
        assert_abs_diff_eq!(diagram_coord(&e1.values), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn extension_examples() {
        let g = make_grid(32).unwrap();
        let z = extend_periodic(&Field::zeros(&g), 64).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert_eq!(periodic_residual(&z, 0.1).unwrap(), 0.0);

        let f = Field::from_fn(&g, |x| (PI * x).sin() + 0.3 * (PI * x / 2.0).cos() * (1.0 - x * x));
        let e = extend_periodic(&f, 64).unwrap();
        let i = e.x.iter().position(|&x| x == 1.5).unwrap();
        assert_abs_diff_eq!(e.values[i], -f.interpolate(0.5).unwrap(), epsilon = 1e-15);

        let s = Field::from_fn(&g, |x| (PI * x).sin());
        let es = extend_periodic(&s, 64).unwrap();
        for (x, v) in es.x.iter().zip(&es.values) {
            assert_abs_diff_eq!(*v, (PI * x).sin(), epsilon = 1e-12);
        }
        let bad = Field::from_fn(&g, |x| x + 2.0);
        assert!(matches!(extend_periodic(&bad, 64), Err(KsError::BoundaryViolation(_))));
    }

    #[test]
    fn non_equilibrium_has_large_residual() {
        let g = make_grid(32).unwrap();
        let f = Field::from_fn(&g, |x| 0.5 * (PI * x).sin() + 0.2 * (2.0 * PI * x).sin());
        let e = extend_periodic(&f, 64).unwrap();
        assert!(periodic_residual(&e, 0.1).unwrap() >= 1e-2);
    }

    #[test]
    fn flow_commutes_with_kappa() {
        let g = make_grid(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..3 {
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u0 = Field::from_fn(&g, |x| {
                c[0] * (PI * x / 2.0).cos() + c[1] * (PI * x).sin() + c[2] * (1.5 * PI * x).cos() + c[3] * (2.0 * PI * x).sin()
            });
            let a = kappa(&flow(&u0, 0.5, 0.06, 1e-3).unwrap());
            let b = flow(&kappa(&u0), 0.5, 0.06, 1e-3).unwrap();
            assert!((&a - &b).norm2() <= 1e-10);
        }
    }

    #[test]
    fn fixed_equilibrium_is_trivially_shift_reflect_symmetric() {
        let g = make_grid(32).unwrap();
        assert!(shift_reflect_check(&Field::zeros(&g), 1.0, 0.2, 1e-3, 1e-6).unwrap());
    }
}
