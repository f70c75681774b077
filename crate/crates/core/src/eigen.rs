//! Arnoldi iteration on linearized flow maps: spectra of equilibria and
//! Floquet multipliers of periodic orbits.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::grid::{ChebyshevGrid, Field};
use crate::stepper::Propagator;
use crate::symmetry::{KernelFunction, Parity};

/// Krylov dimension used throughout.
pub const KRYLOV_DIM: usize = 30;

/// A linear operator known only through its action.
pub trait LinearMap {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Wraps a closure as a [`LinearMap`].
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Result<Vec<f64>>> FnMap<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Result<Vec<f64>>> LinearMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        (self.f)(x)
    }
}

/// Complex Ritz vector split into real and imaginary node values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RitzVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl RitzVector {
    /// Cosine of the angle between the real part and `v`.
    pub fn cosine_with(&self, v: &[f64]) -> f64 {
        let dot: f64 = self.re.iter().zip(v).map(|(a, b)| a * b).sum();
        let na = self.re.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (dot / (na * nb)).abs()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// Eigenvalues of the map, sorted by decreasing modulus.
    pub ritz_values: Vec<Complex64>,
    pub ritz_vectors: Vec<RitzVector>,
    pub residuals: Vec<f64>,
    /// Time spanned by the map the values refer to.
    pub t_map: f64,
    pub converged_count: usize,
    /// Index of the phase multiplier for periodic orbits.
    pub trivial: Option<usize>,
    /// Continuous rates taken from the short sub-map, free of the `2 pi / T`
    /// aliasing of `log(mu) / T`. Empty when no sub-map was used.
    #[serde(default)]
    pub rates: Vec<Complex64>,
}

impl SpectrumResult {
    /// `log(mu) / T` for every Ritz value.
    pub fn growth_rates(&self) -> Vec<Complex64> {
        if self.rates.len() == self.ritz_values.len() {
            return self.rates.clone();
        }
        self.ritz_values.iter().map(|mu| mu.ln() / self.t_map).collect()
    }

    /// Continuous-time eigenvalues recovered by inverting the per-step
    /// amplification `1 / (1 - h lambda)` of the semi-implicit scheme.
    pub fn generator_rates(&self, h: f64) -> Vec<Complex64> {
        let steps = (self.t_map / h).round().max(1.0);
        self.growth_rates()
            .iter()
            .map(|r| {
                let per_step = (r * self.t_map / steps).exp();
                (1.0 - 1.0 / per_step) / h
            })
            .collect()
    }

    /// Ritz values other than the phase multiplier.
    pub fn nontrivial(&self) -> impl Iterator<Item = (usize, &Complex64)> {
        self.ritz_values.iter().enumerate().filter(move |(i, _)| Some(*i) != self.trivial)
    }

    /// All relevant rates have negative real part (within `tol`).
    pub fn is_stable_equilibrium(&self, tol: f64) -> bool {
        self.growth_rates().iter().all(|r| r.re < tol)
    }

    /// All nontrivial multipliers lie inside the unit circle.
    pub fn is_stable_orbit(&self, tol: f64) -> bool {
        self.nontrivial().all(|(_, mu)| mu.norm() < 1.0 + tol)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Ritz vector coefficients of `mu` in the Hessenberg basis by inverse
/// iteration.
fn hessenberg_eigvec(h: &DMatrix<f64>, mu: Complex64) -> DVector<Complex64> {
    let k = h.nrows();
    let scale = h.norm().max(1e-300);
    let shift = mu + Complex64::new(1e-13 * scale, 1e-13 * scale);
    let mut a: DMatrix<Complex64> = h.map(|v| Complex64::new(v, 0.0));
    for i in 0..k {
        a[(i, i)] -= shift;
    }
    let lu = a.lu();
    let mut y = DVector::from_fn(k, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.3 - 0.01 * i as f64));
    for _ in 0..3 {
        match lu.solve(&y) {
            Some(z) => {
                let n = z.norm();
                if !(n.is_finite() && n > 0.0) {
                    break;
                }
                y = z / Complex64::new(n, 0.0);
            }
            None => break,
        }
    }
    // fix the phase so the largest entry is real
    let (imax, _) = y.iter().enumerate().fold((0, 0.0), |acc, (i, c)| if c.norm() > acc.1 { (i, c.norm()) } else { acc });
    let ph = y[imax] / y[imax].norm();
    y.map(|c| c / ph)
}

/// Arnoldi factorization with `m` steps from `start`, returning up to `want`
/// Ritz pairs of largest modulus.
pub fn arnoldi_from(map: &dyn LinearMap, start: &[f64], m: usize, want: usize) -> Result<SpectrumResult> {
    let n = map.dim();
    if start.len() != n {
        return Err(KsError::DimensionMismatch { expected: n, got: start.len() });
    }
    let m = m.min(n);
    let s_norm = norm(start);
    if s_norm == 0.0 {
        return Err(KsError::Invalid("zero Arnoldi start vector".into()));
    }
    let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|v| v / s_norm).collect()];
    let mut hess = DMatrix::<f64>::zeros(m + 1, m);
    let mut k = 0;
    let mut breakdown = false;
    while k < m {
        let mut w = map.apply(&basis[k])?;
        if w.len() != n {
            return Err(KsError::DimensionMismatch { expected: n, got: w.len() });
        }
        let w_norm0 = norm(&w);
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                hess[(i, k)] += c;
                w.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
            }
        }
        let beta = norm(&w);
        hess[(k + 1, k)] = beta;
        k += 1;
        if beta <= 1e-12 * w_norm0.max(1e-300) || beta == 0.0 {
            breakdown = true;
            break;
        }
        if k < m {
            basis.push(w.iter().map(|v| v / beta).collect());
        }
    }

    let hk = hess.view((0, 0), (k, k)).into_owned();
    let tail = if breakdown { 0.0 } else { hess[(k, k - 1)] };
    let mut values: Vec<Complex64> = hk.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap_or(std::cmp::Ordering::Equal));
    values.truncate(want.min(values.len()));

    let mut vectors = Vec::with_capacity(values.len());
    let mut residuals = Vec::with_capacity(values.len());
    let mut converged = 0;
    for &mu in &values {
        let y = hessenberg_eigvec(&hk, mu);
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for (j, v) in basis.iter().take(k).enumerate() {
            for i in 0..n {
                re[i] += y[j].re * v[i];
                im[i] += y[j].im * v[i];
            }
        }
        let res = tail * y[k - 1].norm();
        if res <= 1e-6 * mu.norm().max(1e-300) || res <= 1e-12 {
            converged += 1;
        }
        residuals.push(res);
        vectors.push(RitzVector { re, im });
    }

    Ok(SpectrumResult {
        ritz_values: values,
        ritz_vectors: vectors,
        residuals,
        t_map: 1.0,
        converged_count: converged,
        trivial: None,
        rates: Vec::new(),
    })
}

/// Arnoldi from the fixed start vector of dimension `map.dim()` filled with
/// ones.
pub fn arnoldi(map: &dyn LinearMap, m: usize, want: usize) -> Result<SpectrumResult> {
    let start = vec![1.0; map.dim()];
    arnoldi_from(map, &start, m, want)
}

/// Normalized sum of the even and odd kernel functions with `n = 1, 2`.
pub fn kernel_start_vector(grid: &std::sync::Arc<ChebyshevGrid>) -> Vec<f64> {
    let mut v = vec![0.0; grid.len()];
    for n in [1, 2] {
        for p in [Parity::Even, Parity::Odd] {
            let k = KernelFunction::new(grid, n, p).expect("n >= 1");
            v.iter_mut().zip(k.values.values()).for_each(|(a, b)| *a += b);
        }
    }
    let s = norm(&v);
    v.iter_mut().for_each(|a| *a /= s);
    v
}

/// Longest sub-map used for equilibrium spectra.
const MAX_SUBMAP_TIME: f64 = 0.1;

/// Spectrum of `w0 -> flow_linearized(u*, w0, 0, T)`.
///
/// At a fixed point the time-`T` map is the `q`-th power of the time-`T/q`
/// map, so the Krylov iteration runs on the shorter map (at most 0.1 time
/// units) where strongly damped modes stay above rounding level; the
/// returned values are raised back to time `T`.
pub fn equilibrium_spectrum(prop: &Propagator, u_star: &[f64], t_map: f64, want: usize) -> Result<SpectrumResult> {
    let (steps, _) = prop.plan(t_map)?;
    let h = prop.h();
    let integral = (t_map / h - steps as f64).abs() < 1e-9;
    let mut q = 1;
    if integral {
        let max_sub = ((MAX_SUBMAP_TIME / h).round() as usize).max(1);
        q = (1..=steps).find(|&q| steps % q == 0 && steps / q <= max_sub).unwrap_or(1);
    }
    let sub_time = if q == 1 { t_map } else { (steps / q) as f64 * h };
    let traj = prop.trajectory(u_star, sub_time)?;
    let grid = prop.grid();
    let drift: Vec<f64> = traj.final_state().iter().zip(u_star).map(|(a, b)| a - b).collect();
    let drift = grid.norm2_values(&drift);
    if drift > 1e-6 {
        return Err(KsError::Invalid(format!("not an equilibrium: drift {drift:e} over t={sub_time}")));
    }
    let map = FnMap::new(grid.len(), |w: &[f64]| traj.tangent(w, 0.0));
    let start = kernel_start_vector(grid);
    let mut res = arnoldi_from(&map, &start, KRYLOV_DIM, want)?;
    res.rates = res.ritz_values.iter().map(|mu| mu.ln() / sub_time).collect();
    if q > 1 {
        for mu in res.ritz_values.iter_mut() {
            *mu = mu.powu(q as u32);
        }
    }
    res.t_map = t_map;
    Ok(res)
}

/// Convenience wrapper building its own stepper.
pub fn equilibrium_spectrum_at(u_star: &Field, nu: f64, h: f64, t_map: f64, want: usize) -> Result<SpectrumResult> {
    let prop = Propagator::new(u_star.grid(), nu, h)?;
    equilibrium_spectrum(&prop, u_star.values(), t_map, want)
}

/// Floquet multipliers of the orbit through `u0` with period `period`.
pub fn floquet(prop: &Propagator, u0: &[f64], period: f64, want: usize) -> Result<SpectrumResult> {
    let traj = prop.period_trajectory(u0, period)?;
    let grid = prop.grid();
    let map = FnMap::new(grid.len(), |w: &[f64]| traj.tangent(w, 0.0));
    let velocity = traj.horizon_derivative();
    // start vector biased toward the orbit's own directions
    let mut start = kernel_start_vector(grid);
    let vn = norm(&velocity);
    if vn > 0.0 {
        start.iter_mut().zip(&velocity).for_each(|(s, v)| *s += v / vn);
    }
    let mut res = arnoldi_from(&map, &start, KRYLOV_DIM, want.max(2))?;
    res.t_map = period;

    // among real values near +1 the one best aligned with the velocity; the
    // alignment is lost near a fold of orbits, where +1 is defective
    let mut best: Option<(usize, f64)> = None;
    let mut closest = f64::INFINITY;
    for (i, mu) in res.ritz_values.iter().enumerate() {
        let d = (mu - 1.0).norm();
        closest = closest.min(d);
        if d <= 1e-3 && mu.im.abs() < 1e-9 {
            let c = res.ritz_vectors[i].cosine_with(&velocity);
            if best.map_or(true, |(_, bc)| c > bc) {
                best = Some((i, c));
            }
        }
    }
    match best {
        Some((i, _)) => res.trivial = Some(i),
        None => return Err(KsError::TrivialMultiplier(closest)),
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn identity_has_unit_ritz_values() {
        let map = FnMap::new(12, |x: &[f64]| Ok(x.to_vec()));
        let r = arnoldi(&map, 10, 5).unwrap();
        assert!(!r.ritz_values.is_empty());
        for mu in &r.ritz_values {
            assert_abs_diff_eq!(mu.re, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(mu.im, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn diagonal_map_leading_value() {
        let diag: Vec<f64> = (0..30).map(|i| if i < 3 { 3.0 - i as f64 } else { 0.5 * (30 - i) as f64 / 27.0 }).collect();
        let d = diag.clone();
        let map = FnMap::new(30, move |x: &[f64]| Ok(x.iter().zip(&d).map(|(a, b)| a * b).collect()));
        let start: Vec<f64> = (0..30).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let r = arnoldi_from(&map, &start, 10, 3).unwrap();
        for (mu, want) in r.ritz_values.iter().zip([3.0, 2.0, 1.0]) {
            assert_abs_diff_eq!(mu.re, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn deterministic() {
        let m = DMatrix::from_fn(20, 20, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let map = FnMap::new(20, move |x: &[f64]| Ok((&m * DVector::from_column_slice(x)).as_slice().to_vec()));
        let a = arnoldi(&map, 15, 4).unwrap();
        let b = arnoldi(&map, 15, 4).unwrap();
        assert_eq!(a.ritz_values, b.ritz_values);
    }

    #[test]
    fn complex_pairs_and_residuals() {
        // rotation-scaling blocks with known eigenvalues 2 +- i, 0.5 +- 0.2 i, plus decay
        let n = 12;
        let mut m = DMatrix::<f64>::zeros(n, n);
        m[(0, 0)] = 2.0;
        m[(0, 1)] = -1.0;
        m[(1, 0)] = 1.0;
        m[(1, 1)] = 2.0;
        m[(2, 2)] = 0.5;
        m[(2, 3)] = -0.2;
        m[(3, 2)] = 0.2;
        m[(3, 3)] = 0.5;
        for i in 4..n {
            m[(i, i)] = 0.1 / i as f64;
        }
        let map = FnMap::new(n, move |x: &[f64]| Ok((&m * DVector::from_column_slice(x)).as_slice().to_vec()));
        let r = arnoldi(&map, 12, 4).unwrap();
        assert!((r.ritz_values[0].norm() - 5f64.sqrt()).abs() < 1e-10);
        assert!((r.ritz_values[0].re - 2.0).abs() < 1e-10);
        for (mu, v) in r.ritz_values.iter().zip(&r.ritz_vectors).take(2) {
            let mut m2 = DMatrix::<f64>::zeros(n, n);
            m2[(0, 0)] = 2.0;
            m2[(0, 1)] = -1.0;
            m2[(1, 0)] = 1.0;
            m2[(1, 1)] = 2.0;
            let av_re = &m2 * DVector::from_column_slice(&v.re);
            let av_im = &m2 * DVector::from_column_slice(&v.im);
            for i in 0..2 {
                let lhs = Complex64::new(av_re[i], av_im[i]);
                let rhs = mu * Complex64::new(v.re[i], v.im[i]);
                assert!((lhs - rhs).norm() < 1e-8);
            }
        }
    }

    fn rate(k: f64, nu: f64) -> f64 {
        let a = (k * PI).powi(2);
        a - nu * a * a
    }

    #[test]
    fn zero_state_linear_spectrum() {
        let g = make_grid(32).unwrap();
        let h = 1e-3;
        // the short map keeps all four modes resolvable at large viscosity
        for (nu, map_time) in [(0.5, 0.01), (0.12, 1.0), (0.04, 1.0)] {
            let prop = Propagator::new(&g, nu, h).unwrap();
            let s = equilibrium_spectrum(&prop, &vec![0.0; 33], map_time, 4).unwrap();
            let gen = s.generator_rates(h);
            let mut want: Vec<f64> = [0.5, 1.0, 1.5, 2.0].iter().map(|&k| rate(k, nu)).collect();
            want.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for (got, exp) in gen.iter().zip(&want) {
                assert!(((got.re - exp) / exp).abs() <= 1e-5, "nu={nu}: {} vs {exp}", got.re);
                assert!(got.im.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn neutral_mode_at_first_critical_viscosity() {
        let g = make_grid(32).unwrap();
        let prop = Propagator::new(&g, 4.0 / (PI * PI), 1e-3).unwrap();
        let s = equilibrium_spectrum(&prop, &vec![0.0; 33], 1.0, 4).unwrap();
        assert!(s.growth_rates()[0].re.abs() < 1e-7);
        let prop = Propagator::new(&g, 0.5, 1e-3).unwrap();
        let s = equilibrium_spectrum(&prop, &vec![0.0; 33], 1.0, 4).unwrap();
        assert!(s.growth_rates().iter().all(|r| r.re < 0.0));
        assert!(s.is_stable_equilibrium(1e-8));
    }

    #[test]
    fn non_equilibrium_rejected() {
        let g = make_grid(32).unwrap();
        let prop = Propagator::new(&g, 0.5, 1e-3).unwrap();
        let u = g.sample(|x| 0.1 * (PI * x / 2.0).cos());
        assert!(equilibrium_spectrum(&prop, &u, 1.0, 4).is_err());
    }
}
