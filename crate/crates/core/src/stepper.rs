//! Semi-implicit Euler stepping of the IBVP and its linearization.
//!
//! One step solves `L u' = u - (h/2) (u^2)_x` through the Green's tables:
//!
//! ```text
//! u'   = K0 u + (h/2) K1 u^2
//! u4'  = K4 u + (h/2) K5 u^2
//! w'   = K0 (w - h omega u4') + h K1 (u w)
//! ```
//!
//! A flow over time `T` takes `n = round(T/h)` steps, the last of size
//! `T - (n-1) h`, so the flow is a smooth function of `T`. Period maps are
//! taken as two identical halves of this form, so that the discrete map over
//! `P` is exactly the square of the one over `P/2`.

use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use crate::error::{KsError, Result};
use crate::greens::{assemble_tables, matvec_acc, matvec_into, GreensTables, OperatorParams};
use crate::grid::{ChebyshevGrid, Field};

/// One PDE state with its cached fourth derivative.
#[derive(Debug, Clone)]
pub struct StatePoint {
    pub u: Field,
    pub u4: Field,
    pub t: f64,
}

impl StatePoint {
    /// Starts from `u` with an unknown (zero) fourth derivative.
    pub fn initial(u: Field) -> Self {
        let u4 = Field::zeros(u.grid());
        Self { u, u4, t: 0.0 }
    }
}

/// Perturbation `(w, omega)` of the state and the viscosity.
#[derive(Debug, Clone)]
pub struct TangentState {
    pub w: Field,
    pub omega: f64,
}

fn step_raw(t: &GreensTables, h: f64, u: &[f64], u_next: &mut [f64], u4_next: &mut [f64], sq: &mut [f64]) {
    for (s, &v) in sq.iter_mut().zip(u) {
        *s = v * v;
    }
    matvec_into(&t.k0, u, u_next);
    matvec_acc(&t.k1, 0.5 * h, sq, u_next);
    matvec_into(&t.k4, u, u4_next);
    matvec_acc(&t.k5, 0.5 * h, sq, u4_next);
}

#[allow(clippy::too_many_arguments)]
fn tangent_raw(
    t: &GreensTables,
    h: f64,
    u: &[f64],
    u4_next: &[f64],
    w: &[f64],
    omega: f64,
    w_next: &mut [f64],
    buf: &mut [f64],
) {
    if omega != 0.0 {
        for ((b, &wi), &u4) in buf.iter_mut().zip(w).zip(u4_next) {
            *b = wi - h * omega * u4;
        }
        matvec_into(&t.k0, buf, w_next);
    } else {
        matvec_into(&t.k0, w, w_next);
    }
    for ((b, &ui), &wi) in buf.iter_mut().zip(u).zip(w) {
        *b = ui * wi;
    }
    matvec_acc(&t.k1, h, buf, w_next);
}

/// Advances one step with the tables' time step.
pub fn step(s: &StatePoint, tables: &GreensTables) -> StatePoint {
    let n1 = s.u.values().len();
    let h = tables.params.h;
    let mut u = vec![0.0; n1];
    let mut u4 = vec![0.0; n1];
    let mut sq = vec![0.0; n1];
    step_raw(tables, h, s.u.values(), &mut u, &mut u4, &mut sq);
    let grid = s.u.grid().clone();
    StatePoint {
        u: Field::new(grid.clone(), u).expect("sizes match"),
        u4: Field::new(grid, u4).expect("sizes match"),
        t: s.t + h,
    }
}

/// Advances the tangent `v` from `s` to `s_next = step(s, tables)`.
pub fn step_linearized(
    s: &StatePoint,
    s_next: &StatePoint,
    v: &TangentState,
    tables: &GreensTables,
) -> Result<TangentState> {
    let h = tables.params.h;
    if (s_next.t - s.t - h).abs() > 1e-9 * h.max(s.t.abs()) {
        return Err(KsError::StaleState);
    }
    let n1 = s.u.values().len();
    let mut w = vec![0.0; n1];
    let mut buf = vec![0.0; n1];
    tangent_raw(tables, h, s.u.values(), s_next.u4.values(), v.w.values(), v.omega, &mut w, &mut buf);
    Ok(TangentState { w: Field::new(s.u.grid().clone(), w)?, omega: v.omega })
}

/// Time stepper bound to one grid, viscosity and nominal step.
#[derive(Debug)]
pub struct Propagator {
    grid: Arc<ChebyshevGrid>,
    tables: Arc<GreensTables>,
    closing: Mutex<Option<Arc<GreensTables>>>,
}

impl Propagator {
    pub fn new(grid: &Arc<ChebyshevGrid>, nu: f64, h: f64) -> Result<Self> {
        let params = OperatorParams::new(h, nu)?;
        let tables = Arc::new(assemble_tables(grid, params)?);
        Ok(Self { grid: grid.clone(), tables, closing: Mutex::new(None) })
    }

    pub fn grid(&self) -> &Arc<ChebyshevGrid> {
        &self.grid
    }

    pub fn nu(&self) -> f64 {
        self.tables.params.nu
    }

    pub fn h(&self) -> f64 {
        self.tables.params.h
    }

    pub fn tables(&self) -> &Arc<GreensTables> {
        &self.tables
    }

    /// Step count and closing step size for a horizon `t_total`.
    pub fn plan(&self, t_total: f64) -> Result<(usize, f64)> {
        let h = self.h();
        if !(t_total > 0.0 && t_total.is_finite()) {
            return Err(KsError::Invalid(format!("integration time {t_total} must be positive")));
        }
        let n = ((t_total / h).round() as usize).max(1);
        let last = t_total - (n - 1) as f64 * h;
        Ok((n, last))
    }

    fn closing_tables(&self, h_last: f64) -> Result<Arc<GreensTables>> {
        let h = self.h();
        if (h_last - h).abs() <= 1e-12 * h {
            return Ok(self.tables.clone());
        }
        let mut slot = self.closing.lock().expect("closing table lock poisoned");
        if let Some(t) = slot.as_ref() {
            if t.params.h == h_last {
                return Ok(t.clone());
            }
        }
        let params = OperatorParams::fractional(h_last, self.nu())?;
        let t = Arc::new(assemble_tables(&self.grid, params)?);
        *slot = Some(t.clone());
        Ok(t)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.grid.len() {
            return Err(KsError::DimensionMismatch { expected: self.grid.len(), got: v.len() });
        }
        Ok(())
    }

    /// Integrates node values over `t_total`.
    pub fn flow_values(&self, u0: &[f64], t_total: f64) -> Result<Vec<f64>> {
        Ok(self.run(u0, t_total, 1, None, |_, _, _| {})?.0)
    }

    /// Flow over `period` as two half-period legs.
    pub fn period_map_values(&self, u0: &[f64], period: f64) -> Result<Vec<f64>> {
        Ok(self.run(u0, period, 2, None, |_, _, _| {})?.0)
    }

    /// Integrates and records a snapshot every `every` steps (and the final
    /// state).
    pub fn flow_traced(&self, u0: &[f64], t_total: f64, every: usize) -> Result<(Vec<f64>, SpaceTimeTrace)> {
        let every = every.max(1);
        let mut trace = SpaceTimeTrace { nodes: self.grid.nodes().to_vec(), rows: vec![(0.0, u0.to_vec())] };
        let (n, _) = self.plan(t_total)?;
        let (u, _) = self.run(u0, t_total, 1, None, |k, t, u| {
            if k % every == 0 || k == n {
                trace.rows.push((t, u.to_vec()));
            }
        })?;
        Ok((u, trace))
    }

    /// Integrates and keeps every intermediate state for tangent sweeps.
    pub fn trajectory(&self, u0: &[f64], t_total: f64) -> Result<Trajectory<'_>> {
        self.trajectory_in_legs(u0, t_total, 1)
    }

    /// Trajectory of the period map, see [`Propagator::period_map_values`].
    pub fn period_trajectory(&self, u0: &[f64], period: f64) -> Result<Trajectory<'_>> {
        self.trajectory_in_legs(u0, period, 2)
    }

    fn trajectory_in_legs(&self, u0: &[f64], t_total: f64, legs: usize) -> Result<Trajectory<'_>> {
        let (m, h_last) = self.plan(t_total / legs as f64)?;
        let n = m * legs;
        let n1 = self.grid.len();
        let mut states = Vec::with_capacity((n + 1) * n1);
        states.extend_from_slice(u0);
        let mut u4s = Vec::with_capacity(n * n1);
        self.run(u0, t_total, legs, Some(&mut u4s), |_, _, u| states.extend_from_slice(u))?;
        Ok(Trajectory { prop: self, n, leg: m, h_last, states, u4s, last: self.closing_tables(h_last)?, t_total })
    }

    /// Integrates over `t_total` split into `legs` equal legs, each closed by
    /// its own short step.
    fn run(
        &self,
        u0: &[f64],
        t_total: f64,
        legs: usize,
        mut u4_sink: Option<&mut Vec<f64>>,
        mut on_step: impl FnMut(usize, f64, &[f64]),
    ) -> Result<(Vec<f64>, f64)> {
        self.check_len(u0)?;
        let t_leg = t_total / legs as f64;
        let (m, h_last) = self.plan(t_leg)?;
        let n = m * legs;
        let last = self.closing_tables(h_last)?;
        let n1 = self.grid.len();
        let mut u = u0.to_vec();
        let mut next = vec![0.0; n1];
        let mut u4 = vec![0.0; n1];
        let mut sq = vec![0.0; n1];
        let h = self.h();
        let mut t = 0.0;
        for k in 1..=n {
            let (tab, hk) = if k % m == 0 { (&*last, h_last) } else { (&*self.tables, h) };
            step_raw(tab, hk, &u, &mut next, &mut u4, &mut sq);
            std::mem::swap(&mut u, &mut next);
            t = if k % m == 0 { (k / m) as f64 * t_leg } else { t + hk };
            if k == n {
                t = t_total;
            }
            if !u.iter().all(|v| v.is_finite()) {
                return Err(KsError::NonFinite { t: t - hk });
            }
            if let Some(sink) = u4_sink.as_deref_mut() {
                sink.extend_from_slice(&u4);
            }
            on_step(k, t, &u);
        }
        Ok((u, t))
    }
}

/// Stored base trajectory; tangent sweeps reuse it without recomputing the
/// nonlinear flow.
pub struct Trajectory<'a> {
    prop: &'a Propagator,
    n: usize,
    /// Steps per leg; every `leg`-th step is a closing one.
    leg: usize,
    h_last: f64,
    states: Vec<f64>,
    u4s: Vec<f64>,
    last: Arc<GreensTables>,
    t_total: f64,
}

impl Trajectory<'_> {
    fn width(&self) -> usize {
        self.prop.grid.len()
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn t_total(&self) -> f64 {
        self.t_total
    }

    pub fn state(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.states[k * w..(k + 1) * w]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.n)
    }

    /// Time of the stored state `k`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n {
            return self.t_total;
        }
        let legs = self.n / self.leg;
        let t_leg = self.t_total / legs as f64;
        (k / self.leg) as f64 * t_leg + (k % self.leg) as f64 * self.prop.h()
    }

    fn u4_after(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.u4s[(k - 1) * w..k * w]
    }

    /// Directional derivative of the flow in `(u, nu)` along `(w0, omega)`.
    pub fn tangent(&self, w0: &[f64], omega: f64) -> Result<Vec<f64>> {
        self.prop.check_len(w0)?;
        Ok(self.sweep(w0.to_vec(), omega, 0, self.n))
    }

    /// Tangent sweep of `w` over steps `from+1..=to`.
    fn sweep(&self, mut w: Vec<f64>, omega: f64, from: usize, to: usize) -> Vec<f64> {
        let w_len = self.width();
        let mut next = vec![0.0; w_len];
        let mut buf = vec![0.0; w_len];
        let h = self.prop.h();
        for k in from + 1..=to {
            let (tab, hk) = if k % self.leg == 0 { (&*self.last, self.h_last) } else { (&*self.prop.tables, h) };
            tangent_raw(tab, hk, self.state(k - 1), self.u4_after(k), &w, omega, &mut next, &mut buf);
            std::mem::swap(&mut w, &mut next);
        }
        w
    }

    /// d(state k)/d(size of step k) for a closing step `k`.
    fn closing_step_derivative(&self, k: usize) -> Vec<f64> {
        let uk = self.state(k);
        let prev = self.state(k - 1);
        let hl = self.h_last;
        let mut out = vec![0.0; uk.len()];
        matvec_into(&self.last.k0, uk, &mut out);
        for (o, &v) in out.iter_mut().zip(uk) {
            *o = (*o - v) / hl;
        }
        let sq: Vec<f64> = prev.iter().map(|v| v * v).collect();
        matvec_acc(&self.last.k1, 0.5, &sq, &mut out);
        out
    }

    /// Exact derivative of the discrete flow with respect to the horizon,
    /// through the sizes of the closing steps.
    pub fn horizon_derivative(&self) -> Vec<f64> {
        let legs = self.n / self.leg;
        let scale = 1.0 / legs as f64;
        let mut acc = vec![0.0; self.width()];
        for j in 1..=legs {
            let k = j * self.leg;
            if j > 1 {
                acc = self.sweep(acc, 0.0, k - self.leg, k);
            }
            for (a, d) in acc.iter_mut().zip(self.closing_step_derivative(k)) {
                *a += scale * d;
            }
        }
        acc
    }
}

/// Space-time samples of a flow for export.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeTrace {
    pub nodes: Vec<f64>,
    pub rows: Vec<(f64, Vec<f64>)>,
}

impl SpaceTimeTrace {
    /// Header `t,x_0,...,x_N`, then one row `t,u_0,...,u_N` per snapshot.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "t")?;
        for x in &self.nodes {
            write!(out, ",{}", fmt_num(*x))?;
        }
        writeln!(out)?;
        for (t, u) in &self.rows {
            write!(out, "{}", fmt_num(*t))?;
            for v in u {
                write!(out, ",{}", fmt_num(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| KsError::Invalid("empty trace".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("t") {
            return Err(KsError::Invalid("trace header must start with t".into()));
        }
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| KsError::Invalid(format!("{s}: {e}")));
        let nodes = cols.map(parse).collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let vals = line.split(',').map(parse).collect::<Result<Vec<_>>>()?;
            if vals.len() != nodes.len() + 1 {
                return Err(KsError::Invalid("ragged trace row".into()));
            }
            rows.push((vals[0], vals[1..].to_vec()));
        }
        Ok(Self { nodes, rows })
    }
}

/// Seventeen significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Flow of `u0` over `t_total` at `(nu, h)`.
pub fn flow(u0: &Field, t_total: f64, nu: f64, h: f64) -> Result<Field> {
    let prop = Propagator::new(u0.grid(), nu, h)?;
    let v = prop.flow_values(u0.values(), t_total)?;
    Field::new(u0.grid().clone(), v)
}

/// Flow with a snapshot every `every` steps.
pub fn flow_with_trace(u0: &Field, t_total: f64, nu: f64, h: f64, every: usize) -> Result<(Field, SpaceTimeTrace)> {
    let prop = Propagator::new(u0.grid(), nu, h)?;
    let (v, trace) = prop.flow_traced(u0.values(), t_total, every)?;
    Ok((Field::new(u0.grid().clone(), v)?, trace))
}

/// Directional derivative of the flow along `(w0, omega)`.
pub fn flow_linearized(u0: &Field, w0: &Field, omega: f64, t_total: f64, nu: f64, h: f64) -> Result<Field> {
    u0.check_same_grid(w0)?;
    let prop = Propagator::new(u0.grid(), nu, h)?;
    let traj = prop.trajectory(u0.values(), t_total)?;
    Field::new(u0.grid().clone(), traj.tangent(w0.values(), omega)?)
}
