//! Pseudo-arclength continuation of equilibria and periodic orbits, with
//! bifurcation location, classification and branch switching.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen::{equilibrium_spectrum, floquet, RitzVector, SpectrumResult};
use crate::error::{KsError, Result};
use crate::grid::{make_grid, ChebyshevGrid, Field};
use crate::newton::{
    newton_solve_with, packed_dot, packed_norm, Arclength, Constraint, ContinuationPoint, NewtonReport,
    NewtonSettings, PointKind, PropagatorCache, Solved,
};
use crate::stepper::{fmt_num, Propagator};
use crate::symmetry::{classify_kappa, classify_values, diagram_coord, kappa_values, shift_reflect_defect, SymmetryClass};

/// Located events satisfy `|test| <= LOCATE_TOL`.
pub const LOCATE_TOL: f64 = 1e-6;
/// Relative half-period defect below which an orbit counts as shift-reflect
/// symmetric.
pub const SHIFT_REFLECT_TOL: f64 = 1e-5;
const MAX_LOCATE_STEPS: usize = 40;
/// Imaginary part (of a growth rate) above which a crossing is complex.
const COMPLEX_RATE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationSettings {
    pub h: f64,
    pub ds: f64,
    pub ds_fine: f64,
    /// Number of points taken with `ds_fine` after a start or switch.
    pub fine_points: usize,
    pub nu_min: f64,
    pub nu_max: f64,
    pub max_points: usize,
    pub eigs: usize,
    pub newton: NewtonSettings,
    pub coarse_order: usize,
    pub fine_order: usize,
    /// Below this viscosity the fine grid is used.
    pub fine_below: f64,
    pub max_halvings: usize,
    pub max_period: f64,
    /// Stop once the state norm exceeds this value.
    pub max_norm: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            h: 1e-3,
            ds: 2e-2,
            ds_fine: 5e-3,
            fine_points: 4,
            nu_min: 0.02,
            nu_max: 0.5,
            max_points: 6000,
            eigs: 5,
            newton: NewtonSettings::default(),
            coarse_order: 32,
            fine_order: 64,
            fine_below: 0.03,
            max_halvings: 4,
            max_period: 50.0,
            max_norm: 60.0,
        }
    }
}

/// One accepted point with its tangent, spectrum and symmetry data.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub point: ContinuationPoint,
    /// Unit tangent in the packed `[u, P, nu]` layout.
    pub tangent: Vec<f64>,
    pub arclength: f64,
    pub spectrum: SpectrumResult,
    pub stable: bool,
    pub symmetry: SymmetryClass,
    pub shift_reflect: Option<bool>,
    pub newton: NewtonReport,
    pub residual: f64,
}

impl BranchPoint {
    pub fn nu(&self) -> f64 {
        self.point.nu
    }

    pub fn diagram_coord(&self) -> f64 {
        diagram_coord(&self.point.u)
    }

    pub fn symmetry_label(&self) -> String {
        match self.shift_reflect {
            Some(true) => format!("{}+sr", self.symmetry.as_str()),
            _ => self.symmetry.as_str().to_string(),
        }
    }
}

fn kappa_point(p: &ContinuationPoint) -> ContinuationPoint {
    let u = Field::new(p.grid().clone(), kappa_values(p.u.values())).expect("same grid");
    ContinuationPoint { u, section: -p.section, ..p.clone() }
}

fn kappa_packed(x: &[f64]) -> Vec<f64> {
    let n1 = x.len() - 2;
    let mut out = kappa_values(&x[..n1]);
    out.extend_from_slice(&x[n1..]);
    out
}

fn kappa_spectrum(s: &SpectrumResult) -> SpectrumResult {
    SpectrumResult { ritz_vectors: s.ritz_vectors.iter().map(kappa_ritz).collect(), ..s.clone() }
}

fn kappa_ritz(v: &RitzVector) -> RitzVector {
    RitzVector { re: kappa_values(&v.re), im: kappa_values(&v.im) }
}

impl BranchPoint {
    pub fn kappa_image(&self) -> BranchPoint {
        BranchPoint {
            point: kappa_point(&self.point),
            tangent: kappa_packed(&self.tangent),
            spectrum: kappa_spectrum(&self.spectrum),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub label: String,
    pub kind: PointKind,
    pub points: Vec<BranchPoint>,
    /// Why continuation stopped.
    pub stop: String,
    /// Label of the branch this one is the kappa image of.
    pub partner: Option<String>,
}

impl Branch {
    pub fn is_stable_throughout(&self) -> bool {
        self.points.iter().all(|p| p.stable)
    }

    pub fn is_closed(&self) -> bool {
        self.stop == "closed loop"
    }

    /// Index of the point with the smallest viscosity.
    pub fn nu_min_index(&self) -> usize {
        (0..self.points.len())
            .min_by(|&a, &b| self.points[a].nu().partial_cmp(&self.points[b].nu()).unwrap())
            .unwrap_or(0)
    }

    /// Splits into `[0, k]` and `[k, end]`, both sharing point `k`; the
    /// second part is reversed so it also starts at the primary end.
    pub fn split_at(&self, k: usize, first: &str, second: &str) -> (Branch, Branch) {
        let a = Branch {
            label: first.to_string(),
            kind: self.kind,
            points: self.points[..=k].to_vec(),
            stop: self.stop.clone(),
            partner: None,
        };
        let mut tail: Vec<BranchPoint> = self.points[k..].to_vec();
        tail.reverse();
        let total = tail.first().map_or(0.0, |p| p.arclength);
        for p in tail.iter_mut() {
            p.arclength = total - p.arclength;
            p.tangent.iter_mut().for_each(|v| *v = -*v);
        }
        let b = Branch { label: second.to_string(), kind: self.kind, points: tail, stop: self.stop.clone(), partner: None };
        (a, b)
    }

    /// Pointwise kappa image, labelled `label` and partnered with `self`.
    pub fn kappa_image(&self, label: &str) -> Branch {
        Branch {
            label: label.to_string(),
            kind: self.kind,
            points: self.points.iter().map(BranchPoint::kappa_image).collect(),
            stop: self.stop.clone(),
            partner: Some(self.label.clone()),
        }
    }

    pub fn nu_range(&self) -> (f64, f64) {
        self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.nu()), b.max(p.nu())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Pitchfork,
    Transcritical,
    Fold,
    Hopf,
    OrbitPitchfork,
    OrbitFold,
    PeriodDoubling,
    Torus,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Pitchfork => "pitchfork",
            EventKind::Transcritical => "transcritical",
            EventKind::Fold => "fold",
            EventKind::Hopf => "hopf",
            EventKind::OrbitPitchfork => "orbit_pitchfork",
            EventKind::OrbitFold => "orbit_fold",
            EventKind::PeriodDoubling => "period_doubling",
            EventKind::Torus => "torus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CrossingSet {
    /// Equilibrium eigenvalue through zero.
    Steady,
    /// Orbit multiplier through +1, -1 or elsewhere on the circle.
    Positive,
    Negative,
    Complex,
}

#[derive(Debug, Clone)]
pub struct BifurcationRecord {
    pub kind: EventKind,
    pub nu_c: f64,
    pub point: ContinuationPoint,
    /// Parent tangent at the located point.
    pub tangent: Vec<f64>,
    pub test_value: f64,
    pub critical_values: Vec<Complex64>,
    pub critical_vectors: Vec<RitzVector>,
    pub parent_label: String,
    pub child_labels: Vec<String>,
    pub branch_class: SymmetryClass,
    pub vector_class: Option<SymmetryClass>,
    /// Sign of the `nu` step that makes the critical mode unstable.
    pub unstable_side: f64,
    /// Spectrum at the located point.
    pub spectrum: SpectrumResult,
    pub geometry: Option<String>,
    pub consistent: Option<bool>,
    pub note: String,
}

/// Serializable summary for the bifurcation log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordSummary {
    #[serde(rename = "type")]
    pub kind: EventKind,
    pub nu_c: f64,
    pub period: f64,
    pub parent: String,
    pub children: Vec<String>,
    pub test_value: f64,
    pub critical_values: Vec<[f64; 2]>,
    pub branch_class: SymmetryClass,
    pub vector_class: Option<SymmetryClass>,
    pub geometry: Option<String>,
    pub consistent: Option<bool>,
    pub note: String,
}

impl BifurcationRecord {
    pub fn summary(&self) -> RecordSummary {
        RecordSummary {
            kind: self.kind,
            nu_c: self.nu_c,
            period: self.point.period,
            parent: self.parent_label.clone(),
            children: self.child_labels.clone(),
            test_value: self.test_value,
            critical_values: self.critical_values.iter().map(|c| [c.re, c.im]).collect(),
            branch_class: self.branch_class,
            vector_class: self.vector_class,
            geometry: self.geometry.clone(),
            consistent: self.consistent,
            note: self.note.clone(),
        }
    }

    /// The same event on the kappa image of the parent branch.
    pub fn kappa_image(&self, parent: &str) -> BifurcationRecord {
        BifurcationRecord {
            point: kappa_point(&self.point),
            tangent: kappa_packed(&self.tangent),
            critical_vectors: self.critical_vectors.iter().map(kappa_ritz).collect(),
            spectrum: kappa_spectrum(&self.spectrum),
            parent_label: parent.to_string(),
            child_labels: Vec::new(),
            note: format!("kappa image of the event on {}", self.parent_label),
            ..self.clone()
        }
    }

    /// Growth rate (equilibria) of the critical mode.
    pub fn critical_rate(&self) -> Option<Complex64> {
        let mu = self.critical_values.first()?;
        let rates = self.spectrum.growth_rates();
        match self.spectrum.ritz_values.iter().position(|v| v == mu) {
            Some(j) => rates.get(j).copied(),
            None => Some(mu.ln() / self.spectrum.t_map),
        }
    }
}

/// Writes the bifurcation log as a JSON list.
pub fn write_bifurcation_log(path: &Path, records: &[BifurcationRecord]) -> Result<()> {
    let list: Vec<RecordSummary> = records.iter().map(|r| r.summary()).collect();
    fs::write(path, serde_json::to_string_pretty(&list)?)?;
    Ok(())
}

pub fn read_bifurcation_log(path: &Path) -> Result<Vec<RecordSummary>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Per-point solution snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub kind: PointKind,
    pub nu: f64,
    pub period: f64,
    pub grid_order: usize,
    pub values: Vec<f64>,
    /// Orbit phase-section level; zero for equilibria.
    #[serde(default)]
    pub section: f64,
}

impl SolutionFile {
    pub fn from_point(p: &ContinuationPoint) -> Self {
        Self { kind: p.kind, nu: p.nu, period: p.period, grid_order: p.grid().order(), values: p.u.values().to_vec(), section: p.section }
    }

    pub fn to_point(&self) -> Result<ContinuationPoint> {
        let grid = make_grid(self.grid_order)?;
        let u = Field::new(grid, self.values.clone())?;
        Ok(match self.kind {
            PointKind::Equilibrium => ContinuationPoint::equilibrium(u, self.nu, self.period),
            PointKind::Orbit => ContinuationPoint::orbit(u, self.period, self.nu, self.section),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Number of multiplier columns in branch CSV files.
pub const CSV_MULTIPLIERS: usize = 5;

pub fn branch_csv_header() -> String {
    let mut h = String::from("index,nu,period,diagram_coord,l2norm,stable");
    for i in 1..=CSV_MULTIPLIERS {
        h.push_str(&format!(",re_mu_{i},im_mu_{i}"));
    }
    h.push_str(",symmetry_class,solution_file");
    h
}

/// Writes `<label>.csv` and one solution JSON per point under
/// `solutions/<label>/` inside `dir`.
pub fn write_branch(dir: &Path, b: &Branch) -> Result<()> {
    let sol_rel = Path::new("solutions").join(&b.label);
    fs::create_dir_all(dir.join(&sol_rel))?;
    let file = fs::File::create(dir.join(format!("{}.csv", b.label)))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{}", branch_csv_header())?;
    for (i, p) in b.points.iter().enumerate() {
        let name = sol_rel.join(format!("{i:05}.json"));
        SolutionFile::from_point(&p.point).save(&dir.join(&name))?;
        write!(
            out,
            "{},{},{},{},{},{}",
            i,
            fmt_num(p.point.nu),
            fmt_num(p.point.period),
            fmt_num(p.diagram_coord()),
            fmt_num(p.point.u.norm2()),
            u8::from(p.stable)
        )?;
        for k in 0..CSV_MULTIPLIERS {
            match p.spectrum.ritz_values.get(k) {
                Some(mu) => write!(out, ",{},{}", fmt_num(mu.re), fmt_num(mu.im))?,
                None => write!(out, ",,")?,
            }
        }
        writeln!(out, ",{},{}", p.symmetry_label(), name.to_string_lossy())?;
    }
    Ok(())
}

/// One row of a branch CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub index: usize,
    pub nu: f64,
    pub period: f64,
    pub diagram_coord: f64,
    pub l2norm: f64,
    pub stable: bool,
    pub multipliers: Vec<Option<Complex64>>,
    pub symmetry_class: String,
    pub solution_file: String,
}

pub fn read_branch_csv(text: &str) -> Result<Vec<BranchRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| KsError::Invalid("empty branch file".into()))?;
    if header != branch_csv_header() {
        return Err(KsError::Invalid("unexpected branch header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| KsError::Invalid(format!("{s}: {e}")));
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 8 + 2 * CSV_MULTIPLIERS {
            return Err(KsError::Invalid("ragged branch row".into()));
        }
        let mut multipliers = Vec::new();
        for k in 0..CSV_MULTIPLIERS {
            let (re, im) = (c[6 + 2 * k], c[7 + 2 * k]);
            multipliers.push(if re.is_empty() { None } else { Some(Complex64::new(num(re)?, num(im)?)) });
        }
        rows.push(BranchRow {
            index: c[0].parse().map_err(|_| KsError::Invalid("bad index".into()))?,
            nu: num(c[1])?,
            period: num(c[2])?,
            diagram_coord: num(c[3])?,
            l2norm: num(c[4])?,
            stable: c[5] == "1",
            multipliers,
            symmetry_class: c[6 + 2 * CSV_MULTIPLIERS].to_string(),
            solution_file: c[7 + 2 * CSV_MULTIPLIERS].to_string(),
        });
    }
    Ok(rows)
}

/// Steppers for both grid orders.
struct Caches {
    coarse: PropagatorCache,
    fine: PropagatorCache,
    coarse_grid: Arc<ChebyshevGrid>,
}

impl Caches {
    fn for_grid(&mut self, g: &Arc<ChebyshevGrid>) -> &mut PropagatorCache {
        if g.order() == self.coarse_grid.order() {
            &mut self.coarse
        } else {
            &mut self.fine
        }
    }
}

/// Continuation driver holding settings and the two grids.
#[derive(Debug, Clone)]
pub struct Continuer {
    pub settings: ContinuationSettings,
    coarse: Arc<ChebyshevGrid>,
    fine: Arc<ChebyshevGrid>,
}

fn resample_packed(v: &[f64], from: &Arc<ChebyshevGrid>, to: &Arc<ChebyshevGrid>) -> Vec<f64> {
    if Arc::ptr_eq(from, to) {
        return v.to_vec();
    }
    let n1 = from.len();
    let f = Field::new(from.clone(), v[..n1].to_vec()).expect("packed length");
    let mut out = f.resample(to).into_values();
    out.extend_from_slice(&v[n1..]);
    out
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn axpy(x: &[f64], s: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + s * b).collect()
}

/// Signature of a point's spectrum used to spot crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Signature {
    steady: usize,
    positive: usize,
    negative: usize,
    complex: usize,
}

fn multiplier_set(mu: &Complex64) -> CrossingSet {
    if mu.im.abs() <= 1e-8 * mu.norm().max(1e-300) {
        if mu.re >= 0.0 {
            CrossingSet::Positive
        } else {
            CrossingSet::Negative
        }
    } else {
        CrossingSet::Complex
    }
}

fn signature(kind: PointKind, s: &SpectrumResult) -> Signature {
    let mut sig = Signature { steady: 0, positive: 0, negative: 0, complex: 0 };
    match kind {
        PointKind::Equilibrium => {
            sig.steady = s.growth_rates().iter().filter(|r| r.re > 0.0).count();
        }
        PointKind::Orbit => {
            for (_, mu) in s.nontrivial() {
                if mu.norm() > 1.0 {
                    match multiplier_set(mu) {
                        CrossingSet::Positive => sig.positive += 1,
                        CrossingSet::Negative => sig.negative += 1,
                        _ => sig.complex += 1,
                    }
                }
            }
        }
    }
    sig
}

fn count(sig: &Signature, set: CrossingSet) -> usize {
    match set {
        CrossingSet::Steady => sig.steady,
        CrossingSet::Positive => sig.positive,
        CrossingSet::Negative => sig.negative,
        CrossingSet::Complex => sig.complex,
    }
}

/// Index and signed test value of the eigenvalue nearest to criticality in
/// `set`.
fn critical(kind: PointKind, s: &SpectrumResult, set: CrossingSet) -> Option<(usize, f64)> {
    match kind {
        PointKind::Equilibrium => s
            .growth_rates()
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.re))
            .min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap()),
        PointKind::Orbit => s
            .nontrivial()
            .filter(|(_, mu)| multiplier_set(mu) == set)
            .map(|(i, mu)| (i, mu.norm() - 1.0))
            .min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap()),
    }
}

impl Continuer {
    pub fn new(settings: ContinuationSettings) -> Result<Self> {
        settings.newton.validate()?;
        let coarse = make_grid(settings.coarse_order)?;
        let fine = make_grid(settings.fine_order)?;
        Ok(Self { settings, coarse, fine })
    }

    pub fn coarse_grid(&self) -> &Arc<ChebyshevGrid> {
        &self.coarse
    }

    pub fn fine_grid(&self) -> &Arc<ChebyshevGrid> {
        &self.fine
    }

    /// Grid used at viscosity `nu`.
    pub fn grid_for(&self, nu: f64) -> &Arc<ChebyshevGrid> {
        if nu < self.settings.fine_below {
            &self.fine
        } else {
            &self.coarse
        }
    }

    fn caches(&self) -> Caches {
        Caches {
            coarse: PropagatorCache::new(&self.coarse, self.settings.h),
            fine: PropagatorCache::new(&self.fine, self.settings.h),
            coarse_grid: self.coarse.clone(),
        }
    }

    /// Moves a point onto one of the driver's grids.
    pub fn adopt(&self, p: &ContinuationPoint, grid: &Arc<ChebyshevGrid>) -> ContinuationPoint {
        let mut q = p.clone();
        q.u = p.u.resample(grid);
        q
    }

    fn adopt_for_nu(&self, p: &ContinuationPoint) -> ContinuationPoint {
        self.adopt(p, self.grid_for(p.nu))
    }

    fn solve(&self, c: &mut Caches, guess: &ContinuationPoint, cons: Constraint) -> Result<Solved> {
        let g = guess.grid().clone();
        newton_solve_with(c.for_grid(&g), guess, &self.settings.newton, cons)
    }

    /// Newton solve at fixed viscosity.
    pub fn solve_fixed(&self, guess: &ContinuationPoint) -> Result<Solved> {
        let mut c = self.caches();
        let g = self.adopt_for_nu(guess);
        self.solve(&mut c, &g, Constraint::None)
    }

    fn propagator<'a>(&self, c: &'a mut Caches, p: &ContinuationPoint) -> Result<&'a Propagator> {
        c.for_grid(p.grid()).get(p.nu)
    }

    /// Spectrum, stability and symmetry of a converged point.
    pub fn analyze(&self, p: &ContinuationPoint) -> Result<(SpectrumResult, bool, SymmetryClass, Option<bool>)> {
        let mut c = self.caches();
        let target = if p.grid().order() == self.fine.order() { &self.fine } else { &self.coarse };
        let p = self.adopt(p, target);
        self.analyze_in(&mut c, &p)
    }

    fn analyze_in(&self, c: &mut Caches, p: &ContinuationPoint) -> Result<(SpectrumResult, bool, SymmetryClass, Option<bool>)> {
        let eigs = self.settings.eigs;
        let prop = self.propagator(c, p)?;
        let class = classify_kappa(&p.u, crate::symmetry::CLASSIFY_TOL);
        match p.kind {
            PointKind::Equilibrium => {
                let s = equilibrium_spectrum(prop, p.u.values(), p.period, eigs)?;
                let stable = s.growth_rates().iter().all(|r| r.re < 0.0);
                Ok((s, stable, class, None))
            }
            PointKind::Orbit => {
                let s = floquet(prop, p.u.values(), p.period, eigs)?;
                let stable = s.is_stable_orbit(0.0);
                let sr = shift_reflect_defect(prop, p.u.values(), p.period)? <= SHIFT_REFLECT_TOL;
                Ok((s, stable, class, Some(sr)))
            }
        }
    }

    fn make_point(&self, c: &mut Caches, solved: Solved, tangent: Vec<f64>, arclength: f64) -> Result<BranchPoint> {
        let (spectrum, stable, symmetry, shift_reflect) = self.analyze_in(c, &solved.point)?;
        Ok(BranchPoint {
            point: solved.point,
            tangent,
            arclength,
            spectrum,
            stable,
            symmetry,
            shift_reflect,
            newton: solved.report,
            residual: solved.residual,
        })
    }

    /// Unit tangent from a solve at a slightly shifted viscosity.
    fn nu_perturbation_tangent(&self, c: &mut Caches, p: &ContinuationPoint, direction: f64) -> Result<Vec<f64>> {
        let dnu = direction.signum() * self.settings.ds_fine * 0.2;
        let mut guess = p.clone();
        guess.nu += dnu;
        let s = self.solve(c, &guess, Constraint::None)?;
        let d = sub(&s.point.pack(), &p.pack());
        let n = packed_norm(p.grid(), &d);
        Ok(d.iter().map(|v| v / n).collect())
    }

    /// Continues from a converged `start`. Without an explicit tangent the
    /// first one comes from a shifted-viscosity solve in `direction` (sign of
    /// the `nu` step).
    pub fn continue_branch(
        &self,
        start: &ContinuationPoint,
        direction: f64,
        tangent: Option<Vec<f64>>,
        label: &str,
    ) -> Result<Branch> {
        let st = &self.settings;
        let mut c = self.caches();
        let start = self.adopt_for_nu(start);
        let first = self.solve(&mut c, &start, Constraint::None)?;
        let t0 = match tangent {
            Some(t) => {
                let t = resample_packed(&t, &self.grid_of_len(t.len() - 2), start.grid());
                let n = packed_norm(start.grid(), &t);
                t.iter().map(|v| v / n).collect()
            }
            None => self.nu_perturbation_tangent(&mut c, &first.point, direction)?,
        };
        let bp = self.make_point(&mut c, first, t0, 0.0)?;
        let mut branch = Branch { label: label.to_string(), kind: start.kind, points: vec![bp], stop: String::new(), partner: None };

        let home = branch.points[0].point.pack();
        let home_grid = branch.points[0].point.grid().clone();
        let mut ds = st.ds_fine;
        let mut failures = 0;
        while branch.points.len() < st.max_points {
            let last = branch.points.last().expect("nonempty");
            let target = if branch.points.len() <= st.fine_points { st.ds_fine } else { st.ds };
            ds = ds.min(target);
            let nu_pred = last.point.nu + ds * last.tangent[last.tangent.len() - 1];
            let grid = self.grid_for(nu_pred).clone();
            let anchor_point = self.adopt(&last.point, &grid);
            let anchor = anchor_point.pack();
            let tangent = {
                let t = resample_packed(&last.tangent, last.point.grid(), &grid);
                let n = packed_norm(&grid, &t);
                t.iter().map(|v| v / n).collect::<Vec<_>>()
            };
            let guess = anchor_point.unpack(&axpy(&anchor, ds, &tangent))?;
            let arc = Arclength { tangent: tangent.clone(), anchor: anchor.clone(), ds };
            let attempt = self.solve(&mut c, &guess, Constraint::Arclength(&arc)).and_then(|s| {
                let x = s.point.pack();
                let step = packed_norm(&grid, &sub(&x, &anchor));
                if step > 2.0 * ds {
                    return Err(KsError::Continuation(format!("step {step:e} exceeds twice ds={ds:e}")));
                }
                if !(s.point.period > 0.0 && s.point.period <= st.max_period) {
                    return Err(KsError::Continuation(format!("period {} out of range", s.point.period)));
                }
                let d = sub(&x, &anchor);
                let secant: Vec<f64> = d.iter().map(|v| v / step).collect();
                let s_len = last.arclength + step;
                self.make_point(&mut c, s, secant, s_len)
            });
            match attempt {
                Ok(p) => {
                    failures = 0;
                    let nu = p.point.nu;
                    let big = p.point.u.norm2() > st.max_norm;
                    let back = resample_packed(&home, &home_grid, p.point.grid());
                    let closed = branch.points.len() > 10
                        && packed_norm(p.point.grid(), &sub(&p.point.pack(), &back)) < 1.01 * ds.max(st.ds_fine);
                    branch.points.push(p);
                    if closed {
                        branch.stop = "closed loop".into();
                        break;
                    }
                    ds = (ds * 1.5).min(target);
                    if nu < st.nu_min {
                        branch.stop = format!("reached nu_min at nu={nu}");
                        break;
                    }
                    if nu > st.nu_max {
                        branch.stop = format!("reached nu_max at nu={nu}");
                        break;
                    }
                    if big {
                        branch.stop = "state norm limit".into();
                        break;
                    }
                }
                Err(e) => {
                    failures += 1;
                    if failures > st.max_halvings {
                        branch.stop = format!("corrector failure at nu={}: {e}", last.point.nu);
                        break;
                    }
                    ds *= 0.5;
                }
            }
        }
        if branch.stop.is_empty() {
            branch.stop = "max_points".into();
        }
        Ok(branch)
    }

    fn grid_of_len(&self, n1: usize) -> Arc<ChebyshevGrid> {
        if n1 == self.fine.len() {
            self.fine.clone()
        } else {
            self.coarse.clone()
        }
    }

    /// Crossing candidates between consecutive points: `(index, set)`.
    fn crossings(&self, b: &Branch) -> Vec<(usize, CrossingSet, bool)> {
        let mut out = Vec::new();
        for i in 0..b.points.len().saturating_sub(1) {
            let (a, c) = (&b.points[i], &b.points[i + 1]);
            let (sa, sc) = (signature(b.kind, &a.spectrum), signature(b.kind, &c.spectrum));
            let fold = a.tangent[a.tangent.len() - 1] * c.tangent[c.tangent.len() - 1] < 0.0;
            let sets: &[CrossingSet] = match b.kind {
                PointKind::Equilibrium => &[CrossingSet::Steady],
                PointKind::Orbit => &[CrossingSet::Positive, CrossingSet::Negative, CrossingSet::Complex],
            };
            for &set in sets {
                if count(&sa, set) != count(&sc, set) {
                    out.push((i, set, fold));
                }
            }
        }
        out
    }

    /// Locates and classifies every crossing along `b`. Failures to locate
    /// are returned as messages.
    pub fn detect_events(&self, b: &Branch) -> (Vec<BifurcationRecord>, Vec<String>) {
        let mut recs = Vec::new();
        let mut fails = Vec::new();
        for (i, set, fold) in self.crossings(b) {
            match self.locate(b, i, set, fold) {
                Ok(r) => recs.push(r),
                Err(e) => fails.push(format!("{} between points {i} and {}: {e}", b.label, i + 1)),
            }
        }
        (recs, fails)
    }

    fn locate(&self, b: &Branch, i: usize, set: CrossingSet, fold: bool) -> Result<BifurcationRecord> {
        let (pa, pb) = (&b.points[i], &b.points[i + 1]);
        match self.locate_between(b, pa, pb, set, fold) {
            Ok(r) => Ok(r),
            Err(e) if pb.point.grid().order() != self.fine.order() => {
                // an exact crossing can unfold into a narrow gap on the coarse
                // grid; retry with both ends re-solved on the fine one
                let mut c = self.caches();
                let lift = |c: &mut Caches, p: &BranchPoint| -> Result<BranchPoint> {
                    let q = self.adopt(&p.point, &self.fine);
                    let solved = self.solve(c, &q, Constraint::None)?;
                    let t = resample_packed(&p.tangent, &self.coarse, &self.fine);
                    self.make_point(c, solved, t, p.arclength)
                };
                let (fa, fb) = match (lift(&mut c, pa), lift(&mut c, pb)) {
                    (Ok(fa), Ok(fb)) => (fa, fb),
                    _ => return Err(e),
                };
                if count(&signature(b.kind, &fa.spectrum), set) == count(&signature(b.kind, &fb.spectrum), set) {
                    return Err(e);
                }
                self.locate_between(b, &fa, &fb, set, fold)
            }
            Err(e) => Err(e),
        }
    }

    fn locate_between(
        &self,
        b: &Branch,
        pa: &BranchPoint,
        pb: &BranchPoint,
        set: CrossingSet,
        fold: bool,
    ) -> Result<BifurcationRecord> {
        let mut c = self.caches();
        let grid = pb.point.grid().clone();
        let anchor_pt = self.adopt(&pa.point, &grid);
        let xa = anchor_pt.pack();
        let xb = pb.point.pack();
        let d = sub(&xb, &xa);
        let len = packed_norm(&grid, &d);
        let t: Vec<f64> = d.iter().map(|v| v / len).collect();
        let na = count(&signature(b.kind, &pa.spectrum), set);
        let test_of = |p: &BranchPoint| critical(b.kind, &p.spectrum, set).map(|(_, v)| v).unwrap_or(f64::NAN);

        let (mut sl, mut sr) = (0.0, len);
        let (mut gl, mut gr) = (test_of(pa), test_of(pb));
        let (mut xl, mut xr) = (xa.clone(), xb.clone());
        let mut last_side = 0i8;
        let mut best: Option<BranchPoint> = None;
        for _ in 0..MAX_LOCATE_STEPS {
            let w = sr - sl;
            let secant_ok = gl.is_finite() && gr.is_finite() && gl * gr < 0.0;
            let mut s = if secant_ok { sl - gl * w / (gr - gl) } else { sl + 0.5 * w };
            if last_side.abs() > 1 || !s.is_finite() {
                s = sl + 0.5 * w;
            }
            s = s.clamp(sl + 0.02 * w, sr - 0.02 * w);
            let arc = Arclength { tangent: t.clone(), anchor: xa.clone(), ds: s };
            // interpolate between the solved bracket ends; the chord from
            // `xa` aims straight at a singular point
            let frac = (s - sl) / (sr - sl);
            let guess = anchor_pt.unpack(&axpy(&xl, frac, &sub(&xr, &xl)))?;
            let solved = self.solve(&mut c, &guess, Constraint::Arclength(&arc))?;
            let bp = self.make_point(&mut c, solved, t.clone(), pa.arclength + s)?;
            let g = test_of(&bp);
            let n = count(&signature(b.kind, &bp.spectrum), set);
            if g.abs() <= LOCATE_TOL {
                best = Some(bp);
                break;
            }
            let xs = bp.point.pack();
            if n == na {
                sl = s;
                gl = g;
                xl = xs;
                last_side = if last_side > 0 { last_side + 1 } else { 1 };
            } else {
                sr = s;
                gr = g;
                xr = xs;
                last_side = if last_side < 0 { last_side - 1 } else { -1 };
            }
            if last_side.abs() > 2 {
                last_side = 2 * last_side.signum();
            }
            if (sr - sl) <= 1e-14 * len.max(1.0) {
                break;
            }
        }
        let bp = best.ok_or(KsError::Bisection(MAX_LOCATE_STEPS))?;
        let (idx, test_value) = critical(b.kind, &bp.spectrum, set).ok_or(KsError::Bisection(MAX_LOCATE_STEPS))?;
        let nb = count(&signature(b.kind, &pb.spectrum), set);
        let dnu = pb.point.nu - pa.point.nu;
        let unstable_side = if nb > na { dnu.signum() } else { -dnu.signum() };
        let mut crit_vals = vec![bp.spectrum.ritz_values[idx]];
        let mut crit_vecs = vec![bp.spectrum.ritz_vectors[idx].clone()];
        // the conjugate partner of a complex pair
        if let Some(j) = (0..bp.spectrum.ritz_values.len())
            .find(|&j| j != idx && (bp.spectrum.ritz_values[j] - crit_vals[0].conj()).norm() < 1e-8 * crit_vals[0].norm())
        {
            if crit_vals[0].im.abs() > 0.0 {
                crit_vals.push(bp.spectrum.ritz_values[j]);
                crit_vecs.push(bp.spectrum.ritz_vectors[j].clone());
            }
        }
        // symmetry of the parent from the bracket ends; the located point is
        // only accurate up to the near-singular direction
        let branch_class = if pa.symmetry == pb.symmetry { pa.symmetry } else { bp.symmetry };
        let shift_reflect = match (pa.shift_reflect, pb.shift_reflect) {
            (Some(a), Some(b)) => Some(a && b),
            _ => bp.shift_reflect,
        };
        let mut rec = BifurcationRecord {
            kind: EventKind::Fold,
            nu_c: bp.point.nu,
            tangent: bp.tangent.clone(),
            test_value,
            critical_values: crit_vals,
            critical_vectors: crit_vecs,
            parent_label: b.label.clone(),
            child_labels: Vec::new(),
            branch_class,
            vector_class: None,
            unstable_side,
            spectrum: bp.spectrum.clone(),
            geometry: None,
            consistent: None,
            note: String::new(),
            point: bp.point,
        };
        classify_event(&mut rec, set, fold, shift_reflect);
        Ok(rec)
    }

    /// Seeds `u_c +- eps v` on the hyperplane orthogonal to the parent
    /// tangent and solves with `nu` (and `P`) free. Returns the converged
    /// children with their outward tangents.
    pub fn branch_switch(&self, r: &BifurcationRecord, eps: f64) -> Result<Vec<(ContinuationPoint, Vec<f64>)>> {
        let mut c = self.caches();
        let grid = r.point.grid().clone();
        let n1 = grid.len();
        let xc = r.point.pack();
        let tp = resample_packed(&r.tangent, &self.grid_of_len(r.tangent.len() - 2), &grid);
        let v = r.critical_vectors.first().ok_or_else(|| KsError::BranchSwitch("no critical vector".into()))?;
        if v.re.len() != n1 {
            return Err(KsError::BranchSwitch("critical vector on another grid".into()));
        }
        let mut dir = v.re.clone();
        if r.point.kind == PointKind::Orbit {
            // keep the seed on the section: shift along the velocity, which
            // shares the multiplier +1
            let mid = grid.mid_index();
            let prop = self.propagator(&mut c, &r.point)?;
            let f = prop.period_trajectory(r.point.u.values(), r.point.period)?.horizon_derivative();
            if f[mid].abs() > 1e-12 * grid.norm2_values(&f) {
                let a = dir[mid] / f[mid];
                dir.iter_mut().zip(&f).for_each(|(d, fv)| *d -= a * fv);
            }
        }
        dir.extend([0.0, 0.0]);
        let proj = packed_dot(&grid, &dir, &tp);
        let dir = axpy(&dir, -proj, &tp);
        let n = packed_norm(&grid, &dir);
        if n == 0.0 {
            return Err(KsError::BranchSwitch("critical vector parallel to the branch".into()));
        }
        let dir: Vec<f64> = dir.iter().map(|a| a / n).collect();
        let mut children = Vec::new();
        for sign in [1.0, -1.0] {
            // strongly unstable parents have a narrow basin: smaller offsets first
            for e in [1.0, 0.25, 0.0625, 0.015625, 2.0, 4.0].map(|f| f * eps) {
                let t: Vec<f64> = dir.iter().map(|a| sign * a).collect();
                let arc = Arclength { tangent: t.clone(), anchor: xc.clone(), ds: e };
                let guess = r.point.unpack(&axpy(&xc, e, &t))?;
                let res = self.solve(&mut c, &guess, Constraint::Arclength(&arc));
                if let Ok(s) = res {
                    let d = sub(&s.point.pack(), &xc);
                    let along = packed_dot(&grid, &d, &tp).abs();
                    if along <= 10.0 * e {
                        let len = packed_norm(&grid, &d);
                        children.push((s.point, d.iter().map(|a| a / len).collect()));
                        break;
                    }
                }
            }
        }
        if children.is_empty() {
            return Err(KsError::BranchSwitch(format!("no child found at nu={}", r.nu_c)));
        }
        Ok(children)
    }

    /// Orbit seed from a located Hopf point: `u_c + eps Re(q)/|q|` with the
    /// phase of `q` chosen so the seed lies on the section `u(0) = u_c(0)`.
    pub fn hopf_start(&self, r: &BifurcationRecord, eps: f64) -> Result<(ContinuationPoint, Vec<f64>)> {
        if r.kind != EventKind::Hopf {
            return Err(KsError::Invalid("not a Hopf record".into()));
        }
        let rate = r.critical_rate().ok_or_else(|| KsError::Invalid("missing critical value".into()))?;
        let omega = rate.im.abs();
        if omega < 1e-3 {
            return Err(KsError::DegenerateHopf(omega));
        }
        let mut c = self.caches();
        let grid = r.point.grid().clone();
        let n1 = grid.len();
        let mid = grid.mid_index();
        let q = &r.critical_vectors[0];
        let qm = Complex64::new(q.re[mid], q.im[mid]);
        // rotate q by exp(i theta) so that Re(q e^{i theta}) vanishes at x = 0
        let theta = if qm.norm() > 0.0 { std::f64::consts::FRAC_PI_2 - qm.arg() } else { 0.0 };
        let rot = Complex64::from_polar(1.0, theta);
        let mut w: Vec<f64> = (0..n1).map(|i| (Complex64::new(q.re[i], q.im[i]) * rot).re).collect();
        let wn = grid.norm2_values(&w);
        w.iter_mut().for_each(|a| *a /= wn);

        let period = 2.0 * std::f64::consts::PI / omega;
        let level = r.point.u.values()[mid];
        let base = ContinuationPoint::orbit(r.point.u.clone(), period, r.nu_c, level);
        let xc = base.pack();
        let tp = resample_packed(&r.tangent, &self.grid_of_len(r.tangent.len() - 2), &grid);
        let mut dir = w.clone();
        dir.extend([0.0, 0.0]);
        let proj = packed_dot(&grid, &dir, &tp);
        let dir = axpy(&dir, -proj, &tp);
        let dn = packed_norm(&grid, &dir);
        let dir: Vec<f64> = dir.iter().map(|a| a / dn).collect();

        let mut e = eps;
        let mut last_err = None;
        for _ in 0..4 {
            let arc = Arclength { tangent: dir.clone(), anchor: xc.clone(), ds: e };
            let guess = base.unpack(&axpy(&xc, e, &dir))?;
            match self.solve(&mut c, &guess, Constraint::Arclength(&arc)) {
                Ok(s) => {
                    let p = s.point;
                    let prop = self.propagator(&mut c, &p)?;
                    let half = prop.flow_values(p.u.values(), 0.5 * p.period)?;
                    let motion = grid.norm2_values(&sub(&half, p.u.values()));

                    if motion > 1e-3 * e && (p.period - period).abs() <= 0.5 * period {
                        let d = sub(&p.pack(), &xc);
                        let len = packed_norm(&grid, &d);
                        return Ok((p, d.iter().map(|a| a / len).collect()));
                    }
                    last_err = Some(KsError::Continuation(format!("seed collapsed to the equilibrium (eps={e})")));
                }
                Err(err) => last_err = Some(err),
            }
            e *= 2.0;
        }
        Err(last_err.unwrap_or_else(|| KsError::Continuation("Hopf start failed".into())))
    }
}

/// Applies the classification rules to a located record.
fn classify_event(r: &mut BifurcationRecord, set: CrossingSet, fold: bool, shift_reflect: Option<bool>) {
    let grid = r.point.grid().clone();
    let complex = r.critical_values.len() > 1 || r.critical_rate().map_or(false, |z| z.im.abs() > COMPLEX_RATE);
    match set {
        CrossingSet::Steady => {
            if complex {
                r.kind = EventKind::Hopf;
                r.note = "complex pair crossing".into();
                return;
            }
            let v = &r.critical_vectors[0].re;
            let vc = classify_values(&grid, v, 1e-5);
            r.vector_class = Some(vc);
            if fold {
                r.kind = EventKind::Fold;
                r.note = "dnu/ds changes sign".into();
                return;
            }
            match (r.branch_class, vc) {
                (SymmetryClass::Generic, _) => {
                    r.kind = EventKind::Transcritical;
                    r.note = "branch without kappa symmetry".into();
                }
                (_, SymmetryClass::Anti) => {
                    r.kind = EventKind::Pitchfork;
                    r.note = "kappa-breaking".into();
                }
                (_, SymmetryClass::Fixed) => {
                    r.kind = EventKind::Pitchfork;
                    r.note = "kappa-preserving (hidden symmetry)".into();
                }
                (_, SymmetryClass::Generic) => {
                    r.kind = EventKind::Pitchfork;
                    r.note = "critical vector has no definite kappa parity".into();
                    r.consistent = Some(false);
                }
            }
        }
        CrossingSet::Positive => {
            r.kind = if fold { EventKind::OrbitFold } else { EventKind::OrbitPitchfork };
            r.note = match shift_reflect {
                Some(true) => "on a shift-reflect symmetric orbit".into(),
                _ => "orbit without shift-reflect symmetry".into(),
            };
        }
        CrossingSet::Negative => {
            r.kind = EventKind::PeriodDoubling;
        }
        CrossingSet::Complex => {
            r.kind = EventKind::Torus;
        }
    }
}

/// Compares switched children with the rule-based type and fills
/// `geometry` / `consistent`.
pub fn check_switch_geometry(r: &mut BifurcationRecord, children: &[(ContinuationPoint, Vec<f64>)]) {
    let sides: Vec<f64> = children.iter().map(|(p, _)| (p.nu - r.nu_c).signum()).collect();
    let geometry = match children.len() {
        2 if sides[0] != sides[1] => "children on both sides",
        2 => "children on one side",
        1 => "single child",
        _ => "no children",
    };
    r.geometry = Some(geometry.to_string());
    let ok = match r.kind {
        EventKind::Transcritical => geometry == "children on both sides",
        EventKind::Pitchfork | EventKind::OrbitPitchfork => geometry == "children on one side",
        _ => true,
    };
    r.consistent = Some(r.consistent.unwrap_or(true) && ok);
}

/// Whether two equilibria are (approximately) kappa images of each other.
pub fn kappa_related(a: &Field, b: &Field, tol: f64) -> bool {
    if a.check_same_grid(b).is_err() {
        return false;
    }
    let k = kappa_values(a.values());
    let d: Vec<f64> = k.iter().zip(b.values()).map(|(x, y)| x - y).collect();
    a.grid().norm2_values(&d) <= tol * a.norm2().max(1e-300)
}

/// A stable object present at the requested viscosity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Attractor {
    pub label: String,
    pub kind: PointKind,
    pub nu: f64,
    pub diagram_coord: f64,
    /// Entry stands for the kappa image of `label`, which was not computed
    /// as a branch of its own.
    pub kappa_image: bool,
}

/// Stable objects at `nu` from branches that straddle it.
pub fn coexistence_report(branches: &[Branch], nu: f64) -> Vec<Attractor> {
    let mut out = Vec::new();
    let labels: Vec<&str> = branches.iter().map(|b| b.label.as_str()).collect();
    for b in branches {
        for w in b.points.windows(2) {
            let (a, c) = (&w[0], &w[1]);
            if (a.nu() - nu) * (c.nu() - nu) > 0.0 || a.nu() == c.nu() {
                continue;
            }
            if !(a.stable && c.stable) {
                continue;
            }
            let f = (nu - a.nu()) / (c.nu() - a.nu());
            let coord = a.diagram_coord() + f * (c.diagram_coord() - a.diagram_coord());
            out.push(Attractor { label: b.label.clone(), kind: b.kind, nu, diagram_coord: coord, kappa_image: false });
            let symmetric = match b.kind {
                PointKind::Equilibrium => a.symmetry == SymmetryClass::Fixed,
                PointKind::Orbit => a.shift_reflect == Some(true) || a.symmetry == SymmetryClass::Fixed,
            };
            let partner_listed = branches
                .iter()
                .any(|o| o.partner.as_deref() == Some(b.label.as_str()) || b.partner.as_deref() == Some(o.label.as_str()));
            let partner_label_present = b.partner.as_deref().map_or(false, |p| labels.contains(&p));
            if !symmetric && !partner_listed && !partner_label_present {
                let k = a.point.u.values().to_vec();
                let img = Field::new(a.point.grid().clone(), kappa_values(&k)).expect("same length");
                let kc = diagram_coord(&img);
                out.push(Attractor { label: b.label.clone(), kind: b.kind, nu, diagram_coord: kc, kappa_image: true });
            }
        }
    }
    out
}

/// The trivial branch start `u = 0` at `nu`.
pub fn trivial_start(grid: &Arc<ChebyshevGrid>, nu: f64, c: f64) -> ContinuationPoint {
    ContinuationPoint::equilibrium(Field::zeros(grid), nu, c)
}
