//! Run configuration and the commands behind `ksdir`: `simulate`,
//! `trace-diagram` and `verify`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continuation::{ContinuationSettings, Continuer, SolutionFile};
use crate::eigen::equilibrium_spectrum_at;
use crate::error::{KsError, Result};
use crate::grid::{make_grid, ChebyshevGrid, Field};
use crate::lsred::{ls_verify, LsReport};
use crate::newton::{newton_solve, Constraint, ContinuationPoint, NewtonSettings};
use crate::scenario::{short_family, trace_diagram, Diagram, DiagramSettings};
use crate::stepper::Propagator;
use crate::symmetry::{extend_periodic, kappa, periodic_residual, KernelFunction, Parity, EXTENSION_M};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Grid order above `fine_below`.
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_fine")]
    pub n_fine: usize,
    pub fine_below: f64,
    pub h: f64,
    pub ds: f64,
    pub ds_fine: f64,
    pub nu_start: f64,
    pub nu_min: f64,
    pub eigs: usize,
    pub newton: NewtonSettings,
    pub output_dir: PathBuf,
    /// Label of the branch the diagram starts from.
    pub seed_label: String,
    pub max_points: usize,
    pub secondary_points: usize,
    pub orbit_points: usize,
    pub switch_eps: f64,
    pub hopf_eps: f64,
    pub census_nu: f64,
    /// `simulate`: viscosity, initial condition, horizon and snapshot stride.
    pub nu: f64,
    pub u0: String,
    pub t_final: f64,
    pub snapshot_every: usize,
    /// `verify`: viscosity of the linear-spectrum block.
    pub spectrum_nu: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = ContinuationSettings::default();
        let d = DiagramSettings::default();
        Self {
            n: c.coarse_order,
            n_fine: c.fine_order,
            fine_below: c.fine_below,
            h: c.h,
            ds: c.ds,
            ds_fine: c.ds_fine,
            nu_start: d.nu_start,
            nu_min: c.nu_min,
            eigs: c.eigs,
            newton: c.newton,
            output_dir: PathBuf::from("out"),
            seed_label: "trivial".into(),
            max_points: c.max_points,
            secondary_points: d.secondary_points,
            orbit_points: d.orbit_points,
            switch_eps: d.switch_eps,
            hopf_eps: d.hopf_eps,
            census_nu: d.census_nu,
            nu: 0.38,
            u0: "kernel:1:even:0.1".into(),
            t_final: 200.0,
            snapshot_every: 100,
            spectrum_nu: 0.12,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn continuation(&self) -> ContinuationSettings {
        ContinuationSettings {
            h: self.h,
            ds: self.ds,
            ds_fine: self.ds_fine,
            nu_min: self.nu_min,
            max_points: self.max_points,
            eigs: self.eigs,
            newton: self.newton,
            coarse_order: self.n,
            fine_order: self.n_fine,
            fine_below: self.fine_below,
            ..ContinuationSettings::default()
        }
    }

    pub fn diagram(&self) -> DiagramSettings {
        DiagramSettings {
            continuation: self.continuation(),
            seed_label: self.seed_label.clone(),
            nu_start: self.nu_start,
            switch_eps: self.switch_eps,
            hopf_eps: self.hopf_eps,
            secondary_points: self.secondary_points,
            orbit_points: self.orbit_points,
            census_nu: self.census_nu,
        }
    }

    /// Grid order used at viscosity `nu`.
    pub fn order_for(&self, nu: f64) -> usize {
        if nu < self.fine_below {
            self.n_fine
        } else {
            self.n
        }
    }
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(KsError::Invalid(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

/// Initial condition from `zero`, `kernel:n:parity:amplitude` or
/// `file:path` (a solution JSON, resampled onto `grid`).
pub fn parse_initial(spec: &str, grid: &std::sync::Arc<ChebyshevGrid>) -> Result<Field> {
    let bad = || KsError::Invalid(format!("initial condition '{spec}' is not zero, kernel:n:parity:amplitude or file:path"));
    if spec == "zero" {
        return Ok(Field::zeros(grid));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let sol = SolutionFile::load(Path::new(path))?;
        return Ok(sol.to_point()?.u.resample(grid));
    }
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 4 || parts[0] != "kernel" {
        return Err(bad());
    }
    let n: usize = parts[1].parse().map_err(|_| bad())?;
    let parity = match parts[2] {
        "even" => Parity::Even,
        "odd" => Parity::Odd,
        _ => return Err(bad()),
    };
    let amp: f64 = parts[3].parse().map_err(|_| bad())?;
    Ok(KernelFunction::new(grid, n, parity)?.values.scaled(amp))
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutcome {
    pub path: PathBuf,
    pub snapshots: usize,
    pub final_time: f64,
    pub final_norm: f64,
}

/// Flow from `cfg.u0` at `cfg.nu`, written to `spacetime.csv`.
pub fn simulate(cfg: &RunConfig, force: bool) -> Result<SimulateOutcome> {
    let path = cfg.output_dir.join("spacetime.csv");
    guard(&path, force)?;
    let grid = make_grid(cfg.order_for(cfg.nu))?;
    let u0 = parse_initial(&cfg.u0, &grid)?;
    let prop = Propagator::new(&grid, cfg.nu, cfg.h)?;
    let (u, trace) = prop.flow_traced(u0.values(), cfg.t_final, cfg.snapshot_every)?;
    fs::create_dir_all(&cfg.output_dir)?;
    trace.save(&path)?;
    Ok(SimulateOutcome {
        path,
        snapshots: trace.rows.len(),
        final_time: trace.rows.last().map_or(0.0, |r| r.0),
        final_norm: grid.norm2_values(&u),
    })
}

/// Runs the scripted diagram and writes every file under the output
/// directory.
pub fn run_trace_diagram(cfg: &RunConfig, force: bool, log: &mut dyn FnMut(&str)) -> Result<Diagram> {
    guard(&cfg.output_dir.join("bifurcation_log.json"), force)?;
    let s = cfg.diagram();
    let d = trace_diagram(&s, log)?;
    d.write(&cfg.output_dir, s.census_nu)?;
    Ok(d)
}

pub const SPECTRUM_TOL: f64 = 1e-5;
pub const LS_TOL: f64 = 1e-9;
pub const PERIODIC_RESIDUAL_TOL: f64 = 1e-7;
pub const PAIRING_TOL: f64 = 1e-10;
/// Newton tolerance when re-converging samples on the fine grid.
pub const REFINE_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub k: f64,
    pub analytic: f64,
    pub computed: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumBlock {
    pub nu: f64,
    pub grid_order: usize,
    pub h: f64,
    pub t_map: f64,
    pub rows: Vec<RateRow>,
    pub pass: bool,
}

/// Leading rates of the zero state against `k^2 pi^2 - nu k^4 pi^4`,
/// `k = 1/2, 1, 3/2`.
pub fn spectrum_block(nu: f64, order: usize, h: f64) -> Result<SpectrumBlock> {
    let grid = make_grid(order)?;
    let t_map = 1.0;
    let spec = equilibrium_spectrum_at(&Field::zeros(&grid), nu, h, t_map, 5)?;
    let mut rates: Vec<f64> = spec.generator_rates(h).iter().map(|r| r.re).collect();
    rates.sort_by(|a, b| b.total_cmp(a));
    let rows: Vec<RateRow> = [0.5, 1.0, 1.5]
        .iter()
        .zip(&rates)
        .map(|(&k, &computed)| {
            let kp = k * PI;
            let analytic = kp * kp - nu * kp.powi(4);
            RateRow { k, analytic, computed, rel_error: ((computed - analytic) / analytic).abs() }
        })
        .collect();
    let pass = rows.len() == 3 && rows.iter().all(|r| r.rel_error <= SPECTRUM_TOL);
    Ok(SpectrumBlock { nu, grid_order: order, h, t_map, rows, pass })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsBlock {
    pub reports: Vec<LsReport>,
    /// Largest deviation over `e_norm`, `g_y3` and `w_y2_amplitude`.
    pub max_deviation: f64,
    pub pass: bool,
}

pub fn ls_block(order: usize) -> Result<LsBlock> {
    let grid = make_grid(order.max(64))?;
    let reports = (1..=3).map(|n| ls_verify(n, &grid)).collect::<Result<Vec<_>>>()?;
    let max_deviation = reports
        .iter()
        .map(|r| r.max_deviation(&["e_norm", "g_y3", "w_y2_amplitude"]))
        .fold(0.0, f64::max);
    Ok(LsBlock { reports, max_deviation, pass: max_deviation <= LS_TOL })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtensionRow {
    pub family: String,
    pub nu: f64,
    /// Sup-norm steady residual of the odd extension on 256 samples, for
    /// the branch point as computed and after re-converging it on
    /// `refined_order`.
    pub native_order: usize,
    pub residual_native: f64,
    pub refined_order: usize,
    pub residual_refined: f64,
    /// Refined state on `4 M` samples, for reference.
    pub residual_refined_default_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairingRow {
    pub family: String,
    pub nu: f64,
    /// Largest `|u_kappa(x) + u(-x)|` over the extension grid, with the
    /// partner solved independently from the permuted state.
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HiddenSymmetryBlock {
    pub fixed: Vec<ExtensionRow>,
    pub pairs: Vec<PairingRow>,
    pub pass: bool,
}

/// Branch indices sampled by the hidden-symmetry block.
pub const SAMPLE_INDICES: [usize; 3] = [100, 250, 400];

/// Three equilibria along the family born at `(k pi)^-2`.
pub fn family_samples(st: &ContinuationSettings, k: f64) -> Result<Vec<ContinuationPoint>> {
    let b = short_family(st, k, SAMPLE_INDICES[2] + 1, 0.05)?;
    Ok(SAMPLE_INDICES.iter().filter_map(|&i| b.points.get(i)).map(|p| p.point.clone()).collect())
}

pub fn hidden_symmetry_block(st: &ContinuationSettings) -> Result<HiddenSymmetryBlock> {
    let fine = make_grid(st.fine_order.max(64))?;
    // a resampled state already meets the continuation tolerance
    let tight = NewtonSettings { residual_tol: REFINE_TOL, ..st.newton };
    let mut fixed = Vec::new();
    for k in [1.0, 2.0] {
        for p in family_samples(st, k)? {
            let guess = ContinuationPoint { u: p.u.resample(&fine), ..p.clone() };
            let refined = newton_solve(&guess, &tight, st.h, Constraint::None)?.point;
            fixed.push(ExtensionRow {
                family: format!("k={k}"),
                nu: p.nu,
                native_order: p.grid().order(),
                residual_native: periodic_residual(&extend_periodic(&p.u, 64)?, p.nu)?,
                refined_order: fine.order(),
                residual_refined: periodic_residual(&extend_periodic(&refined.u, 64)?, p.nu)?,
                residual_refined_default_m: periodic_residual(&extend_periodic(&refined.u, EXTENSION_M)?, p.nu)?,
            });
        }
    }
    let cont = Continuer::new(st.clone())?;
    let mut pairs = Vec::new();
    for k in [0.5, 1.5] {
        for p in family_samples(st, k)? {
            let guess = ContinuationPoint { u: kappa(&p.u), ..p.clone() };
            let partner = cont.solve_fixed(&guess)?.point;
            let a = extend_periodic(&p.u, EXTENSION_M)?;
            let b = extend_periodic(&partner.u, EXTENSION_M)?;
            // b(x) against -a(-x); index i maps x to -x on the periodic grid
            let n = a.values.len();
            let deviation = (0..n).map(|i| (b.values[i] + a.values[(n - i) % n]).abs()).fold(0.0, f64::max);
            pairs.push(PairingRow { family: format!("k={k}"), nu: p.nu, deviation });
        }
    }
    let pass = fixed.len() == 6
        && pairs.len() == 6
        && fixed.iter().all(|r| r.residual_refined <= PERIODIC_RESIDUAL_TOL)
        && pairs.iter().all(|r| r.deviation <= PAIRING_TOL);
    Ok(HiddenSymmetryBlock { fixed, pairs, pass })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub spectrum: SpectrumBlock,
    pub ls: LsBlock,
    pub hidden_symmetry: HiddenSymmetryBlock,
    pub pass: bool,
}

/// Aggregated checks, written to `verification.json`.
pub fn verify(cfg: &RunConfig, force: bool) -> Result<VerificationReport> {
    let path = cfg.output_dir.join("verification.json");
    guard(&path, force)?;
    let spectrum = spectrum_block(cfg.spectrum_nu, cfg.order_for(cfg.spectrum_nu), cfg.h)?;
    let ls = ls_block(cfg.n)?;
    let hidden_symmetry = hidden_symmetry_block(&cfg.continuation())?;
    let pass = spectrum.pass && ls.pass && hidden_symmetry.pass;
    let report = VerificationReport { spectrum, ls, hidden_symmetry, pass };
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
