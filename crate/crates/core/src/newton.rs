//! Matrix-free Newton-Krylov solver for fixed points of the flow map.
//!
//! Unknowns are packed as `[u_0, ..., u_N, P]` or, when an arclength
//! constraint frees the viscosity, `[u_0, ..., u_N, P, nu]`. The equations
//! are `phi(u, P, nu) - u = 0`, one phase condition, and optionally the
//! arclength row.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::eigen::{FnMap, LinearMap};
use crate::error::{KsError, Result};
use crate::grid::{ChebyshevGrid, Field};
use crate::stepper::Propagator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Equilibrium,
    Orbit,
}

impl PointKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointKind::Equilibrium => "equilibrium",
            PointKind::Orbit => "orbit",
        }
    }
}

/// A solution candidate: state, period (or integration time), viscosity.
#[derive(Debug, Clone)]
pub struct ContinuationPoint {
    pub u: Field,
    pub period: f64,
    pub nu: f64,
    pub kind: PointKind,
    /// Value pinned at `x = 0` by the orbit phase condition.
    pub section: f64,
}

impl ContinuationPoint {
    pub fn equilibrium(u: Field, nu: f64, c: f64) -> Self {
        Self { u, period: c, nu, kind: PointKind::Equilibrium, section: 0.0 }
    }

    pub fn orbit(u: Field, period: f64, nu: f64, section: f64) -> Self {
        Self { u, period, nu, kind: PointKind::Orbit, section }
    }

    pub fn grid(&self) -> &Arc<ChebyshevGrid> {
        self.u.grid()
    }

    /// `[u, P, nu]`.
    pub fn pack(&self) -> Vec<f64> {
        let mut v = self.u.values().to_vec();
        v.push(self.period);
        v.push(self.nu);
        v
    }

    /// Inverse of [`pack`](Self::pack), keeping kind and section.
    pub fn unpack(&self, x: &[f64]) -> Result<Self> {
        let n1 = self.grid().len();
        if x.len() != n1 + 2 {
            return Err(KsError::DimensionMismatch { expected: n1 + 2, got: x.len() });
        }
        Ok(Self {
            u: Field::new(self.grid().clone(), x[..n1].to_vec())?,
            period: x[n1],
            nu: x[n1 + 1],
            kind: self.kind,
            section: self.section,
        })
    }
}

/// Inner product on packed `[u, P, nu]` vectors: quadrature on `u`, unit
/// weights on the scalars.
pub fn packed_dot(grid: &ChebyshevGrid, a: &[f64], b: &[f64]) -> f64 {
    let n1 = grid.len();
    grid.inner_values(&a[..n1], &b[..n1]) + a[n1..].iter().zip(&b[n1..]).map(|(x, y)| x * y).sum::<f64>()
}

pub fn packed_norm(grid: &ChebyshevGrid, a: &[f64]) -> f64 {
    packed_dot(grid, a, a).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonSettings {
    pub residual_tol: f64,
    pub krylov_tol: f64,
    pub max_newton: usize,
    pub max_krylov: usize,
    /// Integration time used for equilibria.
    pub c: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { residual_tol: 1e-8, krylov_tol: 1e-6, max_newton: 20, max_krylov: 40, c: 1.0 }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.residual_tol > 0.0
            && self.krylov_tol > 0.0
            && self.max_newton > 0
            && self.max_krylov > 0
            && self.c > 0.0;
        if ok {
            Ok(())
        } else {
            Err(KsError::Invalid("Newton settings must all be positive".into()))
        }
    }
}

/// Pseudo-arclength row `<t, x - anchor> = ds` on packed vectors.
#[derive(Debug, Clone)]
pub struct Arclength {
    pub tangent: Vec<f64>,
    pub anchor: Vec<f64>,
    pub ds: f64,
}

#[derive(Debug, Clone, Copy)]
pub enum Constraint<'a> {
    None,
    Arclength(&'a Arclength),
}

/// Residual split into the flow part and the phase part.
pub fn residual(p: &ContinuationPoint, h: f64) -> Result<(Field, f64)> {
    let prop = Propagator::new(p.grid(), p.nu, h)?;
    let v = prop.period_map_values(p.u.values(), p.period)?;
    let f: Vec<f64> = v.iter().zip(p.u.values()).map(|(a, b)| a - b).collect();
    Ok((Field::new(p.grid().clone(), f)?, phase(p, NewtonSettings::default().c)))
}

fn phase(p: &ContinuationPoint, c: f64) -> f64 {
    match p.kind {
        PointKind::Equilibrium => p.period - c,
        PointKind::Orbit => p.u.values()[p.grid().mid_index()] - p.section,
    }
}

/// `sqrt(||F||^2 + psi^2)`.
pub fn residual_norm(p: &ContinuationPoint, h: f64) -> Result<f64> {
    let (f, psi) = residual(p, h)?;
    Ok((f.norm2().powi(2) + psi * psi).sqrt())
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Achieved `||A x - b|| / ||b||`.
    pub residual: f64,
    pub converged: bool,
}

/// Unrestarted GMRES from `x0 = 0`.
pub fn gmres(map: &dyn LinearMap, rhs: &[f64], tol: f64, maxit: usize) -> Result<GmresOutcome> {
    let n = map.dim();
    if rhs.len() != n {
        return Err(KsError::DimensionMismatch { expected: n, got: rhs.len() });
    }
    let beta = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if beta == 0.0 {
        return Ok(GmresOutcome { x: vec![0.0; n], iterations: 0, residual: 0.0, converged: true });
    }
    let maxit = maxit.min(n).max(1);
    let mut v: Vec<Vec<f64>> = vec![rhs.iter().map(|r| r / beta).collect()];
    // column-major Hessenberg after rotations
    let mut r: Vec<Vec<f64>> = Vec::with_capacity(maxit);
    let mut cs: Vec<(f64, f64)> = Vec::with_capacity(maxit);
    let mut g = vec![0.0; maxit + 1];
    g[0] = beta;
    let mut k = 0;
    let mut rel = 1.0;
    while k < maxit {
        let mut w = map.apply(&v[k])?;
        let mut col = vec![0.0; k + 2];
        for _ in 0..2 {
            for (i, vi) in v.iter().enumerate() {
                let c: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
                col[i] += c;
                w.iter_mut().zip(vi).for_each(|(a, b)| *a -= c * b);
            }
        }
        let hn = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        col[k + 1] = hn;
        for (i, &(c, s)) in cs.iter().enumerate() {
            let (a, b) = (col[i], col[i + 1]);
            col[i] = c * a + s * b;
            col[i + 1] = -s * a + c * b;
        }
        let (a, b) = (col[k], col[k + 1]);
        let den = a.hypot(b);
        let (c, s) = if den == 0.0 { (1.0, 0.0) } else { (a / den, b / den) };
        col[k] = den;
        col[k + 1] = 0.0;
        cs.push((c, s));
        g[k + 1] = -s * g[k];
        g[k] *= c;
        r.push(col);
        k += 1;
        rel = g[k].abs() / beta;
        if rel <= tol || hn <= 1e-14 * beta {
            break;
        }
        v.push(w.iter().map(|a| a / hn).collect());
    }
    // back substitution
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for j in i + 1..k {
            s -= r[j][i] * y[j];
        }
        y[i] = if r[i][i] != 0.0 { s / r[i][i] } else { 0.0 };
    }
    let mut x = vec![0.0; n];
    for (j, yj) in y.iter().enumerate() {
        x.iter_mut().zip(&v[j]).for_each(|(a, b)| *a += yj * b);
    }
    Ok(GmresOutcome { x, iterations: k, residual: rel, converged: rel <= tol })
}

/// Iteration log of one Newton solve.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NewtonReport {
    pub residuals: Vec<f64>,
    pub gmres_iterations: Vec<usize>,
    pub gmres_residuals: Vec<f64>,
    pub damped: usize,
}

impl NewtonReport {
    pub fn iterations(&self) -> usize {
        self.gmres_iterations.len()
    }

    /// `||r_{k+1}|| / ||r_k||^2` for consecutive iterates.
    pub fn quadratic_ratios(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| w[1] / (w[0] * w[0])).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Solved {
    pub point: ContinuationPoint,
    pub report: NewtonReport,
    /// Final composite residual.
    pub residual: f64,
}

/// Keeps one stepper per viscosity so repeated evaluations at fixed `nu`
/// share Green's tables.
pub struct PropagatorCache {
    grid: Arc<ChebyshevGrid>,
    h: f64,
    slot: Option<Propagator>,
}

impl PropagatorCache {
    pub fn new(grid: &Arc<ChebyshevGrid>, h: f64) -> Self {
        Self { grid: grid.clone(), h, slot: None }
    }

    pub fn get(&mut self, nu: f64) -> Result<&Propagator> {
        let stale = match &self.slot {
            Some(p) => p.nu() != nu || !Arc::ptr_eq(p.grid(), &self.grid),
            None => true,
        };
        if stale {
            self.slot = Some(Propagator::new(&self.grid, nu, self.h)?);
        }
        Ok(self.slot.as_ref().expect("just filled"))
    }
}

struct Evaluated {
    x: Vec<f64>,
    norm: f64,
}

fn evaluate(
    props: &mut PropagatorCache,
    base: &ContinuationPoint,
    x: &[f64],
    s: &NewtonSettings,
    arc: Option<&Arclength>,
) -> Result<(Vec<f64>, f64)> {
    let p = base.unpack(x)?;
    if !(p.period > 0.0) {
        return Err(KsError::Invalid(format!("non-positive period {}", p.period)));
    }
    let grid = base.grid().clone();
    let prop = props.get(p.nu)?;
    let phi = prop.period_map_values(p.u.values(), p.period)?;
    let mut r: Vec<f64> = phi.iter().zip(p.u.values()).map(|(a, b)| a - b).collect();
    let psi = phase(&p, s.c);
    let mut norm2 = grid.norm2_values(&r).powi(2) + psi * psi;
    r.push(psi);
    if let Some(a) = arc {
        let d: Vec<f64> = x.iter().zip(&a.anchor).map(|(a, b)| a - b).collect();
        let g = packed_dot(&grid, &a.tangent, &d) - a.ds;
        norm2 += g * g;
        r.push(g);
    }
    Ok((r, norm2.sqrt()))
}

/// Newton iteration on `guess`; `nu` is an unknown only under an arclength
/// constraint.
pub fn newton_solve(guess: &ContinuationPoint, s: &NewtonSettings, h: f64, constraint: Constraint) -> Result<Solved> {
    let mut props = PropagatorCache::new(guess.grid(), h);
    newton_solve_with(&mut props, guess, s, constraint)
}

/// As [`newton_solve`] with a caller-owned stepper cache.
pub fn newton_solve_with(
    props: &mut PropagatorCache,
    guess: &ContinuationPoint,
    s: &NewtonSettings,
    constraint: Constraint,
) -> Result<Solved> {
    s.validate()?;
    let arc = match constraint {
        Constraint::None => None,
        Constraint::Arclength(a) => Some(a),
    };
    let grid = guess.grid().clone();
    let n1 = grid.len();
    let mid = grid.mid_index();
    let free_nu = arc.is_some();
    let dim = if free_nu { n1 + 2 } else { n1 + 1 };
    if let Some(a) = arc {
        if a.tangent.len() != n1 + 2 || a.anchor.len() != n1 + 2 {
            return Err(KsError::DimensionMismatch { expected: n1 + 2, got: a.tangent.len() });
        }
    }
    let x0 = guess.pack();
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(KsError::Invalid("non-finite Newton guess".into()));
    }

    let mut report = NewtonReport::default();
    let (mut r, norm) = evaluate(props, guess, &x0, s, arc)?;
    let mut cur = Evaluated { x: x0, norm };
    report.residuals.push(norm);
    let fail = |report: &NewtonReport| KsError::NewtonFailed {
        iterations: report.iterations(),
        history: report.residuals.clone(),
    };

    for _ in 0..s.max_newton {
        if cur.norm <= s.residual_tol {
            break;
        }
        let p = guess.unpack(&cur.x)?;
        let prop = props.get(p.nu)?;
        let traj = prop.period_trajectory(p.u.values(), p.period)?;
        let dphi_dp = traj.horizon_derivative();
        let kind = guess.kind;
        let jac = FnMap::new(dim, |d: &[f64]| {
            let du = &d[..n1];
            let dp = d[n1];
            let dnu = if free_nu { d[n1 + 1] } else { 0.0 };
            let mut out = traj.tangent(du, dnu)?;
            for i in 0..n1 {
                out[i] += dp * dphi_dp[i] - du[i];
            }
            out.push(match kind {
                PointKind::Equilibrium => dp,
                PointKind::Orbit => du[mid],
            });
            if let Some(a) = arc {
                let mut full = d.to_vec();
                if !free_nu {
                    full.push(0.0);
                }
                out.push(packed_dot(&grid, &a.tangent, &full));
            }
            Ok(out)
        });
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let lin = gmres(&jac, &rhs, s.krylov_tol, s.max_krylov)?;
        report.gmres_iterations.push(lin.iterations);
        report.gmres_residuals.push(lin.residual);

        let step = |frac: f64| {
            let mut x = cur.x.clone();
            for (i, d) in lin.x.iter().enumerate() {
                x[i] += frac * d;
            }
            x
        };
        let mut x_new = step(1.0);
        let mut trial = evaluate(props, guess, &x_new, s, arc);
        let worse = match &trial {
            Ok((_, n)) => !(*n < cur.norm),
            Err(_) => true,
        };
        if worse {
            let x_half = step(0.5);
            if let Ok((rh, nh)) = evaluate(props, guess, &x_half, s, arc) {
                let better = match &trial {
                    Ok((_, n)) => nh < *n,
                    Err(_) => true,
                };
                if better {
                    x_new = x_half;
                    trial = Ok((rh, nh));
                    report.damped += 1;
                }
            }
        }
        let (r_new, n_new) = match trial {
            Ok(v) => v,
            Err(_) => return Err(fail(&report)),
        };
        r = r_new;
        cur = Evaluated { x: x_new, norm: n_new };
        report.residuals.push(n_new);
        if !n_new.is_finite() {
            return Err(fail(&report));
        }
        let k = report.residuals.len();
        if k >= 4 && report.residuals[k - 4..].windows(2).all(|w| w[1] > w[0]) {
            return Err(fail(&report));
        }
    }
    if cur.norm > s.residual_tol {
        return Err(fail(&report));
    }
    let point = guess.unpack(&cur.x)?;
    Ok(Solved { point, report, residual: cur.norm })
}
