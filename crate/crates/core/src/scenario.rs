//! Scripted bifurcation diagram.
//!
//! Continues the trivial branch, switches onto the four primary families,
//! then handles one level of secondary events: steady switches, Hopf orbits
//! and the orbit pitchforks met along them.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continuation::{
    check_switch_geometry, coexistence_report, trivial_start, write_bifurcation_log, write_branch, Attractor,
    sub, BifurcationRecord, Branch, ContinuationSettings, Continuer, EventKind,
};
use crate::error::{KsError, Result};
use crate::newton::{packed_dot, packed_norm, ContinuationPoint};
use crate::symmetry::SymmetryClass;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagramSettings {
    pub continuation: ContinuationSettings,
    /// Label of the trivial branch.
    pub seed_label: String,
    pub nu_start: f64,
    pub switch_eps: f64,
    pub hopf_eps: f64,
    pub secondary_points: usize,
    pub orbit_points: usize,
    /// Viscosity of the stable-object census.
    pub census_nu: f64,
}

impl Default for DiagramSettings {
    fn default() -> Self {
        Self {
            continuation: ContinuationSettings::default(),
            seed_label: "trivial".into(),
            nu_start: 0.5,
            switch_eps: 0.05,
            hopf_eps: 0.05,
            secondary_points: 500,
            orbit_points: 900,
            census_nu: 0.025,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Diagram {
    pub branches: Vec<Branch>,
    pub records: Vec<BifurcationRecord>,
    /// Sub-steps that failed; the run carries on without them.
    pub failures: Vec<String>,
}

impl Diagram {
    pub fn branch(&self, label: &str) -> Option<&Branch> {
        self.branches.iter().find(|b| b.label == label)
    }

    pub fn records_on<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a BifurcationRecord> + 'a {
        self.records.iter().filter(move |r| r.parent_label == label)
    }

    pub fn census(&self, nu: f64) -> Vec<Attractor> {
        coexistence_report(&self.branches, nu)
    }

    /// Branch CSVs with solutions, `bifurcation_log.json`, `failures.json`
    /// and `coexistence.json`.
    pub fn write(&self, dir: &Path, census_nu: f64) -> Result<()> {
        fs::create_dir_all(dir)?;
        for b in &self.branches {
            write_branch(dir, b)?;
        }
        write_bifurcation_log(&dir.join("bifurcation_log.json"), &self.records)?;
        fs::write(dir.join("failures.json"), serde_json::to_string_pretty(&self.failures)?)?;
        fs::write(dir.join("coexistence.json"), serde_json::to_string_pretty(&self.census(census_nu))?)?;
        Ok(())
    }
}

/// `k1_2`, `k1`, `k3_2`, ... from the primary value `(k pi)^-2`.
pub fn family_label(nu_c: f64) -> String {
    let m = (2.0 / (PI * nu_c.sqrt())).round() as i64;
    if m % 2 == 0 {
        format!("k{}", m / 2)
    } else {
        format!("k{m}_2")
    }
}

/// First `points` points of the family born at `(k pi)^-2`, from a short
/// trivial run across the crossing.
pub fn short_family(base: &ContinuationSettings, k: f64, points: usize, eps: f64) -> Result<Branch> {
    let nu_star = (k * PI).powi(-2);
    let ds = 0.02 * nu_star;
    let st = ContinuationSettings { nu_min: 0.9 * nu_star, ds, ds_fine: ds, max_points: 40, ..base.clone() };
    let cont = Continuer::new(st)?;
    let start = trivial_start(cont.coarse_grid(), 1.05 * nu_star, base.newton.c);
    let trivial = cont.continue_branch(&start, -1.0, None, "trivial")?;
    let (recs, _) = cont.detect_events(&trivial);
    let r = recs
        .iter()
        .min_by(|a, b| (a.nu_c - nu_star).abs().total_cmp(&(b.nu_c - nu_star).abs()))
        .ok_or_else(|| KsError::Continuation(format!("no crossing near nu={nu_star}")))?;
    let fam = Continuer::new(ContinuationSettings { max_points: points, ..base.clone() })?;
    let kids = fam.branch_switch(r, eps)?;
    fam.continue_branch(&kids[0].0, -1.0, Some(kids[0].1.clone()), &family_label(nu_star))
}

/// Distance under which a fresh child counts as lying on a known branch,
/// as a fraction of the switching offset.
const CONNECT_FRACTION: f64 = 0.6;

struct Driver<'a> {
    s: &'a DiagramSettings,
    cont: Continuer,
    secondary: Continuer,
    orbits: Continuer,
    d: Diagram,
    /// Branches built as kappa images rather than computed.
    mirrored: Vec<String>,
    log: &'a mut dyn FnMut(&str),
}

/// Runs the whole scenario. Only a failure on the trivial branch is fatal.
pub fn trace_diagram(s: &DiagramSettings, log: &mut dyn FnMut(&str)) -> Result<Diagram> {
    let with_points = |n: usize| -> Result<Continuer> {
        Continuer::new(ContinuationSettings { max_points: n, ..s.continuation.clone() })
    };
    let mut dr = Driver {
        s,
        cont: Continuer::new(s.continuation.clone())?,
        secondary: with_points(s.secondary_points)?,
        orbits: with_points(s.orbit_points)?,
        d: Diagram::default(),
        mirrored: Vec::new(),
        log,
    };
    let start = trivial_start(dr.cont.coarse_grid(), s.nu_start, 1.0);
    let trivial = dr.cont.continue_branch(&start, -1.0, None, &s.seed_label)?;
    (dr.log)(&format!("{}: {} points", s.seed_label, trivial.points.len()));
    let (recs, fails) = dr.cont.detect_events(&trivial);
    dr.d.failures.extend(fails);
    dr.d.branches.push(trivial);

    let mut primary_labels = Vec::new();
    for mut r in recs {
        // keep the trivial-branch record ahead of the family's own events
        let j = dr.d.records.len();
        dr.d.records.push(r.clone());
        if matches!(r.kind, EventKind::Pitchfork | EventKind::Transcritical) {
            primary_labels.extend(dr.primary(&mut r));
        }
        dr.d.records[j] = r;
    }

    let mut pending = Vec::new();
    for label in &primary_labels {
        for (j, r) in dr.d.records.iter().enumerate() {
            if &r.parent_label == label && !dr.mirrored.contains(label) {
                pending.push(j);
            }
        }
    }
    let mut hopf: Vec<usize> = pending.iter().copied().filter(|&j| dr.d.records[j].kind == EventKind::Hopf).collect();
    hopf.sort_by(|&a, &b| dr.d.records[b].nu_c.total_cmp(&dr.d.records[a].nu_c));
    for &j in &pending {
        match dr.d.records[j].kind {
            EventKind::Pitchfork | EventKind::Transcritical => dr.secondary_steady(j),
            EventKind::Hopf => {
                let idx = hopf.iter().position(|&h| h == j).unwrap_or(0) + 1;
                dr.orbit(j, &format!("orbit_hb{idx}"))
            }
            _ => {}
        }
    }
    Ok(dr.d)
}

impl Driver<'_> {
    fn fail(&mut self, msg: String) {
        (self.log)(&format!("failed: {msg}"));
        self.d.failures.push(msg);
    }

    fn continue_logged(&mut self, which: Which, p: &ContinuationPoint, t: &[f64], label: &str) -> Option<Branch> {
        let cont = match which {
            Which::Primary => &self.cont,
            Which::Secondary => &self.secondary,
            Which::Orbit => &self.orbits,
        };
        match cont.continue_branch(p, -1.0, Some(t.to_vec()), label) {
            Ok(b) => {
                let (lo, hi) = b.nu_range();
                (self.log)(&format!("{label}: {} points, nu in [{lo:.5}, {hi:.5}], stop: {}", b.points.len(), b.stop));
                Some(b)
            }
            Err(e) => {
                self.fail(format!("continuing {label}: {e}"));
                None
            }
        }
    }

    fn detect(&mut self, b: &Branch) {
        let (recs, fails) = self.cont.detect_events(b);
        for r in &recs {
            (self.log)(&format!("  {} on {} at nu={:.6} (test {:.1e})", r.kind.as_str(), b.label, r.nu_c, r.test_value));
        }
        self.d.failures.extend(fails);
        self.d.records.extend(recs);
    }

    /// Switches at a trivial-branch crossing and continues the family.
    /// Returns the labels of its branches.
    fn primary(&mut self, r: &mut BifurcationRecord) -> Vec<String> {
        let base = family_label(r.nu_c);
        let kids = match self.cont.branch_switch(r, self.s.switch_eps) {
            Ok(k) => k,
            Err(e) => {
                self.fail(format!("switching onto {base}: {e}"));
                return Vec::new();
            }
        };
        check_switch_geometry(r, &kids);
        let anti = r.vector_class == Some(SymmetryClass::Anti);
        let Some(b0) = self.continue_logged(Which::Primary, &kids[0].0, &kids[0].1, &base) else {
            return Vec::new();
        };
        let (pair, image) = if b0.is_closed() {
            let (a, b) = b0.split_at(b0.nu_min_index(), "a", "b");
            (Some((a, b)), false)
        } else if anti {
            let img = b0.kappa_image("b");
            (Some((b0, img)), true)
        } else if let Some((p, t)) = kids.get(1) {
            match self.continue_logged(Which::Primary, p, t, &format!("{base}_second")) {
                Some(b1) => (Some((b0, b1)), false),
                None => {
                    self.add_single(b0, &base, r);
                    return vec![base];
                }
            }
        } else {
            self.add_single(b0, &base, r);
            return vec![base];
        };
        let (a, b) = pair.expect("pair");
        let a_up = mean_coord(&a) >= mean_coord(&b);
        let (mut up, mut lo) = if a_up { (a, b) } else { (b, a) };
        up.label = format!("{base}_upper");
        lo.label = format!("{base}_lower");
        up.partner = None;
        lo.partner = None;
        let computed_is_up = !image || a_up;
        if anti {
            if computed_is_up {
                lo.partner = Some(up.label.clone());
            } else {
                up.partner = Some(lo.label.clone());
            }
        }
        let (computed, mirror) = if computed_is_up { (&up, &lo) } else { (&lo, &up) };
        let before = self.d.records.len();
        self.detect(computed);
        if image {
            let mapped: Vec<BifurcationRecord> =
                self.d.records[before..].iter().map(|x| x.kappa_image(&mirror.label)).collect();
            self.d.records.extend(mapped);
            self.mirrored.push(mirror.label.clone());
        } else {
            self.detect(mirror);
        }
        r.child_labels = vec![up.label.clone(), lo.label.clone()];
        let labels = r.child_labels.clone();
        self.d.branches.push(up);
        self.d.branches.push(lo);
        labels
    }

    fn add_single(&mut self, mut b: Branch, base: &str, r: &mut BifurcationRecord) {
        b.label = base.to_string();
        self.detect(&b);
        r.child_labels = vec![b.label.clone()];
        self.d.branches.push(b);
    }

    /// Label of a known branch through `p`, other than `parent`. `offset`
    /// is the distance of `p` from the bifurcation point.
    fn connection(&self, p: &ContinuationPoint, parent: &str, offset: f64) -> Option<String> {
        let tol = CONNECT_FRACTION * offset;
        let mut best: Option<(f64, &str)> = None;
        for b in self.d.branches.iter().filter(|b| b.label != parent && b.kind == p.kind) {
            for (i, q) in b.points.iter().enumerate() {
                if (q.nu() - p.nu).abs() > tol.max(self.s.continuation.ds) {
                    continue;
                }
                let g = q.point.grid();
                let x = self.cont.adopt(p, g).pack();
                let a = q.point.pack();
                // distance to the segment towards the next point
                let next = b.points.get(i + 1).filter(|n| n.point.grid().order() == g.order());
                let d: Vec<f64> = match next {
                    Some(n) => {
                        let seg = sub(&n.point.pack(), &a);
                        let rel = sub(&x, &a);
                        let len2 = packed_dot(g, &seg, &seg);
                        let s = if len2 > 0.0 { (packed_dot(g, &rel, &seg) / len2).clamp(0.0, 1.0) } else { 0.0 };
                        rel.iter().zip(&seg).map(|(r, v)| r - s * v).collect()
                    }
                    None => sub(&x, &a),
                };
                let dist = packed_norm(g, &d);
                if dist < tol && best.map_or(true, |(bd, _)| dist < bd) {
                    best = Some((dist, &b.label));
                }
            }
        }
        best.map(|(_, l)| l.to_string())
    }

    fn secondary_steady(&mut self, j: usize) {
        let r = self.d.records[j].clone();
        let tag = if r.kind == EventKind::Pitchfork { "pf" } else { "tc" };
        let n = self.d.records[..j]
            .iter()
            .filter(|x| x.parent_label == r.parent_label && x.kind == r.kind)
            .count();
        let base = format!("{}_{tag}{}", r.parent_label, n + 1);
        let kids = match self.secondary.branch_switch(&r, self.s.switch_eps) {
            Ok(k) => k,
            Err(e) => {
                self.fail(format!("switching at {base}: {e}"));
                return;
            }
        };
        let mut rec = r.clone();
        check_switch_geometry(&mut rec, &kids);
        // children of a kappa-breaking pitchfork are kappa images
        let mirror_second = r.kind == EventKind::Pitchfork && r.vector_class == Some(SymmetryClass::Anti);
        let mut notes = Vec::new();
        let mut first: Option<Branch> = None;
        for (i, (p, t)) in kids.iter().enumerate() {
            let label = format!("{base}_{}", if i == 0 { "a" } else { "b" });
            let offset = packed_norm(r.point.grid(), &sub(&self.cont.adopt(p, r.point.grid()).pack(), &r.point.pack()));
            if let Some(known) = self.connection(p, &r.parent_label, offset) {
                notes.push(format!("child connects to {known}"));
                if !rec.child_labels.contains(&known) {
                    rec.child_labels.push(known);
                }
                continue;
            }
            if i == 1 && mirror_second {
                if let Some(b0) = &first {
                    let img = b0.kappa_image(&label);
                    let mapped: Vec<BifurcationRecord> =
                        self.d.records_on(&b0.label).map(|x| x.kappa_image(&label)).collect();
                    self.d.records.extend(mapped);
                    self.mirrored.push(label.clone());
                    rec.child_labels.push(label);
                    self.d.branches.push(img);
                    continue;
                }
            }
            if let Some(b) = self.continue_logged(Which::Secondary, p, t, &label) {
                self.detect(&b);
                rec.child_labels.push(label);
                if first.is_none() {
                    first = Some(b.clone());
                }
                self.d.branches.push(b);
            }
        }
        if !notes.is_empty() {
            rec.note = notes.join("; ");
        }
        self.d.records[j] = rec;
    }

    fn orbit(&mut self, j: usize, label: &str) {
        let r = self.d.records[j].clone();
        let (p, t) = match self.cont.hopf_start(&r, self.s.hopf_eps) {
            Ok(x) => x,
            Err(e) => {
                self.fail(format!("seeding {label}: {e}"));
                return;
            }
        };
        let Some(b) = self.continue_logged(Which::Orbit, &p, &t, label) else { return };
        self.d.records[j].child_labels.push(label.to_string());
        let before = self.d.records.len();
        self.detect(&b);
        self.d.branches.push(b);
        let ppf: Vec<usize> =
            (before..self.d.records.len()).filter(|&k| self.d.records[k].kind == EventKind::OrbitPitchfork).collect();
        for (n, k) in ppf.into_iter().enumerate() {
            let child = format!("{label}_ppf{}", n + 1);
            let r = self.d.records[k].clone();
            let kids = match self.orbits.branch_switch(&r, self.s.switch_eps) {
                Ok(x) => x,
                Err(e) => {
                    self.fail(format!("switching at {child}: {e}"));
                    continue;
                }
            };
            check_switch_geometry(&mut self.d.records[k], &kids);
            // the second child is the shift-reflect image of the first
            if let Some(b) = self.continue_logged(Which::Orbit, &kids[0].0, &kids[0].1, &child) {
                self.d.records[k].child_labels.push(child);
                self.detect(&b);
                self.d.branches.push(b);
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Which {
    Primary,
    Secondary,
    Orbit,
}

fn mean_coord(b: &Branch) -> f64 {
    let n = b.points.len().max(1) as f64;
    b.points.iter().map(|p| p.diagram_coord()).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_labels() {
        let names: Vec<String> = [0.5, 1.0, 1.5, 2.0].iter().map(|k: &f64| family_label(1.0 / (k * PI).powi(2))).collect();
        assert_eq!(names, ["k1_2", "k1", "k3_2", "k2"]);
    }
}
