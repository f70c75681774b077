//! One PASS/FAIL line per acceptance criterion. Runs the full diagram, so
//! allow tens of minutes. Exits non-zero on a failure only when
//! `ACCEPTANCE_STRICT` is set.

use std::path::PathBuf;
use std::time::Instant;

use ks_dirichlet::cli::{hidden_symmetry_block, ls_block, spectrum_block, REFINE_TOL};
use ks_dirichlet::continuation::{BifurcationRecord, Branch, ContinuationSettings, Continuer, EventKind};
use ks_dirichlet::newton::{NewtonSettings, PointKind};
use ks_dirichlet::lsred::{bif_values, fit_power_law};
use ks_dirichlet::scenario::{trace_diagram, Diagram, DiagramSettings};
use ks_dirichlet::symmetry::SymmetryClass;

const SPECTRUM_NU: f64 = 0.12;
const SPECTRUM_ORDER: usize = 32;
const SPECTRUM_H: f64 = 1e-3;
const PRIMARY_TOL: f64 = 1e-4;
const EXPONENT: f64 = 0.5;
const EXPONENT_TOL: f64 = 0.02;
const SCALING_WINDOW: (f64, f64) = (1e-4, 2e-3);
const HB2_NU: (f64, f64) = (0.02, 0.03);
const K2_NU_LOW: f64 = 0.02;
const CENSUS_NU: f64 = 0.025;
const RESIDUAL_TOL: f64 = 1e-8;
/// Bound on the 95th percentile of `r_{k+1} / r_k^2` over Newton steps
/// starting from `r_k >= QUADRATIC_FROM`. Below that the GMRES forcing term
/// and round-off dominate the quadratic term.
const QUADRATIC_RATIO_MAX: f64 = 10.0;
const QUADRATIC_FROM: f64 = 1e-6;
const GMRES_MEDIAN_MAX: f64 = 25.0;
const REFINEMENT_TOL: f64 = 1e-6;
/// Viscosities of the refinement spot checks, on the primary families
/// k = 1/2, 1 and 3/2.
const SPOT_CHECKS: [(&str, f64); 3] = [("k1_2_upper", 0.3), ("k1_upper", 0.06), ("k3_2_upper", 0.04)];

struct Tally {
    failed: usize,
}

impl Tally {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn main() {
    let t0 = Instant::now();
    let mut t = Tally { failed: 0 };

    linear_spectrum(&mut t);
    ls(&mut t);
    hidden_symmetry(&mut t);

    let s = DiagramSettings::default();
    let quiet = std::env::var_os("ACCEPTANCE_QUIET").is_some();
    let d = match trace_diagram(&s, &mut |m| {
        if !quiet {
            eprintln!("[{:7.1}s] {m}", t0.elapsed().as_secs_f64())
        }
    }) {
        Ok(d) => d,
        Err(e) => {
            t.line("diagram", false, format!("trace_diagram failed: {e}"));
            finish(t);
            return;
        }
    };
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if let Err(e) = d.write(&out, CENSUS_NU) {
        eprintln!("could not write {}: {e}", out.display());
    }
    if !d.failures.is_empty() {
        eprintln!("diagram sub-step failures: {:?}", d.failures);
    }

    primary_values(&mut t, &d);
    pitchfork_scaling(&mut t, &d);
    taxonomy(&mut t, &d);
    coexistence(&mut t, &d);
    period_doubling(&mut t, &d);
    solver_contracts(&mut t, &d, &s.continuation);

    eprintln!("acceptance finished in {:.0} s", t0.elapsed().as_secs_f64());
    finish(t);
}

fn finish(t: Tally) {
    if t.failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}

fn linear_spectrum(t: &mut Tally) {
    match spectrum_block(SPECTRUM_NU, SPECTRUM_ORDER, SPECTRUM_H) {
        Ok(b) => {
            let rows: Vec<String> = b
                .rows
                .iter()
                .map(|r| format!("k={} rate {:.10} vs {:.10} (rel {:.1e})", r.k, r.computed, r.analytic, r.rel_error))
                .collect();
            t.line("linear spectrum", b.pass, rows.join("; "));
        }
        Err(e) => t.line("linear spectrum", false, e.to_string()),
    }
}

fn ls(t: &mut Tally) {
    match ls_block(64) {
        Ok(b) => {
            let g: Vec<String> = b
                .reports
                .iter()
                .map(|r| {
                    let c = &r.coefficients;
                    let oracle = c.g_ynu_oracle.map_or("n/a".to_string(), |v| format!("{v:.6}"));
                    format!("n={} g_ynu -beta^2={:.6} beta^4={oracle}", r.n, c.g_ynu_neg_beta2)
                })
                .collect();
            t.line("LS coefficients", b.pass, format!("max deviation {:.1e}; {}", b.max_deviation, g.join("; ")));
        }
        Err(e) => t.line("LS coefficients", false, e.to_string()),
    }
}

fn hidden_symmetry(t: &mut Tally) {
    match hidden_symmetry_block(&ContinuationSettings::default()) {
        Ok(b) => {
            let worst = b.fixed.iter().map(|r| r.residual_refined).fold(0.0, f64::max);
            let pair = b.pairs.iter().map(|r| r.deviation).fold(0.0, f64::max);
            t.line(
                "hidden symmetry",
                b.pass,
                format!(
                    "{} extensions, worst residual {worst:.1e}; {} pairs, worst deviation {pair:.1e}",
                    b.fixed.len(),
                    b.pairs.len()
                ),
            );
        }
        Err(e) => t.line("hidden symmetry", false, e.to_string()),
    }
}

fn family<'a>(d: &'a Diagram, base: &'a str) -> impl Iterator<Item = &'a Branch> + 'a {
    d.branches.iter().filter(move |b| b.label == format!("{base}_upper") || b.label == format!("{base}_lower"))
}

fn in_family(label: &str, base: &str) -> bool {
    label == format!("{base}_upper") || label == format!("{base}_lower")
}

fn primary_values(t: &mut Tally, d: &Diagram) {
    let expected = bif_values(&[0.5, 1.0, 1.5, 2.0]).expect("positive wave numbers");
    let found: Vec<f64> = d
        .records_on("trivial")
        .filter(|r| matches!(r.kind, EventKind::Pitchfork | EventKind::Transcritical))
        .map(|r| r.nu_c)
        .collect();
    let errs: Vec<f64> = expected
        .iter()
        .map(|e| found.iter().map(|f| (f - e).abs()).fold(f64::INFINITY, f64::min))
        .collect();
    let pass = found.len() == 4 && errs.iter().all(|&e| e <= PRIMARY_TOL);
    let list: Vec<String> = found.iter().map(|v| format!("{v:.6}")).collect();
    t.line(
        "primary bifurcation values",
        pass,
        format!("{} crossings [{}], max error {:.1e}", found.len(), list.join(", "), errs.iter().fold(0.0, |a: f64, &b| a.max(b))),
    );
}

fn pitchfork_scaling(t: &mut Tally, d: &Diagram) {
    let Some(nu_c) = d
        .records_on("trivial")
        .map(|r| r.nu_c)
        .min_by(|a, b| (a - 4.0 / std::f64::consts::PI.powi(2)).abs().total_cmp(&(b - 4.0 / std::f64::consts::PI.powi(2)).abs()))
    else {
        t.line("pitchfork scaling", false, "no crossing on the trivial branch".into());
        return;
    };
    let nu_star = bif_values(&[0.5]).expect("positive")[0];
    let pts: Vec<_> = family(d, "k1_2").flat_map(|b| b.points.iter()).collect();
    if pts.is_empty() {
        t.line("pitchfork scaling", false, "k = 1/2 branch missing".into());
        return;
    }
    let below = pts.iter().all(|p| p.nu() < nu_star);
    let stable = pts.iter().filter(|p| p.stable).count();
    let samples: Vec<(f64, f64)> = pts
        .iter()
        .map(|p| (nu_c - p.nu(), p.point.u.norm2()))
        .filter(|(dn, _)| (SCALING_WINDOW.0..=SCALING_WINDOW.1).contains(dn))
        .collect();
    let fit = fit_power_law(&samples);
    let (exp_ok, exp) = match &fit {
        Ok(f) => ((f.exponent - EXPONENT).abs() <= EXPONENT_TOL && samples.len() >= 3, f.exponent),
        Err(_) => (false, f64::NAN),
    };
    t.line(
        "pitchfork scaling and criticality",
        below && exp_ok && stable == pts.len(),
        format!(
            "all nu < 4/pi^2: {below}; exponent {exp:.4} from {} samples; {stable}/{} points stable",
            samples.len(),
            pts.len()
        ),
    );
}

fn children<'a>(d: &'a Diagram, r: &'a BifurcationRecord) -> impl Iterator<Item = &'a Branch> + 'a {
    r.child_labels.iter().filter_map(|l| d.branch(l))
}

/// Points from the start of `b` up to its first own event.
fn leading_points(d: &Diagram, b: &Branch) -> usize {
    let first = d.records_on(&b.label).map(|r| r.nu_c).collect::<Vec<_>>();
    if first.is_empty() {
        return b.points.len();
    }
    let nu0 = b.points[0].nu();
    b.points
        .iter()
        .position(|p| first.iter().any(|&nu_e| (p.nu() - nu_e) * (nu0 - nu_e) <= 0.0))
        .unwrap_or(b.points.len())
}

fn taxonomy(t: &mut Tally, d: &Diagram) {
    // k = 1/2 meets k = 1 in a pitchfork
    let pf5 = d.records.iter().find(|r| {
        r.kind == EventKind::Pitchfork
            && ((in_family(&r.parent_label, "k1") && r.child_labels.iter().any(|c| in_family(c, "k1_2")))
                || (in_family(&r.parent_label, "k1_2") && r.child_labels.iter().any(|c| in_family(c, "k1"))))
    });
    t.line(
        "taxonomy: pitchfork joining k = 1/2 and k = 1",
        pf5.is_some(),
        pf5.map_or("none".into(), |r| format!("on {} at nu={:.6}, children {:?}", r.parent_label, r.nu_c, r.child_labels)),
    );

    // kappa-breaking pitchfork on the upper k = 1 branch with stable asymmetric children
    let pf9: Vec<(&BifurcationRecord, bool, String)> = d
        .records_on("k1_upper")
        .filter(|r| r.kind == EventKind::Pitchfork && r.vector_class == Some(SymmetryClass::Anti))
        .map(|r| {
            // children born here, not branches it happens to connect to
            let own = format!("{}_", r.parent_label);
            let kids: Vec<&Branch> = children(d, r).filter(|b| b.label.starts_with(&own)).collect();
            let ok = !kids.is_empty()
                && kids.iter().all(|b| {
                    let n = leading_points(d, b);
                    n > 0
                        && b.points[..n].iter().all(|p| p.stable)
                        && b.points.iter().all(|p| p.symmetry == SymmetryClass::Generic)
                });
            let desc: Vec<String> = kids
                .iter()
                .map(|b| {
                    let n = leading_points(d, b);
                    format!("{} {}/{} stable before its first event", b.label, b.points[..n].iter().filter(|p| p.stable).count(), n)
                })
                .collect();
            (r, ok, desc.join(", "))
        })
        .collect();
    let hit = pf9.iter().find(|x| x.1);
    t.line(
        "taxonomy: kappa-breaking pitchfork on upper k = 1",
        hit.is_some(),
        match hit.or(pf9.first()) {
            Some((r, _, desc)) => format!("at nu={:.6}: {desc}", r.nu_c),
            None => "no anti pitchfork on k1_upper".into(),
        },
    );

    // Hopf on lower k = 1 with a shift-reflect symmetric orbit
    let hb1 = d.records_on("k1_lower").find(|r| r.kind == EventKind::Hopf);
    match hb1 {
        Some(r) => {
            let orbit = children(d, r).next();
            let sr = orbit.map(|b| (b.points.iter().filter(|p| p.shift_reflect == Some(true)).count(), b.points.len()));
            let pass = sr.is_some_and(|(a, n)| n > 0 && a == n);
            t.line(
                "taxonomy: Hopf on lower k = 1, orbit shift-reflect symmetric",
                pass,
                format!(
                    "at nu={:.6}, orbit {}: {}",
                    r.nu_c,
                    orbit.map_or("missing", |b| b.label.as_str()),
                    sr.map_or("-".into(), |(a, n)| format!("{a}/{n} points symmetric"))
                ),
            );
        }
        None => t.line("taxonomy: Hopf on lower k = 1, orbit shift-reflect symmetric", false, "no Hopf on k1_lower".into()),
    }

    let tc = d.records.iter().find(|r| r.kind == EventKind::Transcritical && in_family(&r.parent_label, "k3_2"));
    t.line(
        "taxonomy: transcritical on k = 3/2",
        tc.is_some(),
        tc.map_or("none".into(), |r| format!("on {} at nu={:.6}", r.parent_label, r.nu_c)),
    );

    let hb2: Vec<&BifurcationRecord> = d
        .records
        .iter()
        .filter(|r| r.kind == EventKind::Hopf && (HB2_NU.0..=HB2_NU.1).contains(&r.nu_c) && !r.child_labels.is_empty())
        .collect();
    let hb2_ok = hb2.iter().find_map(|r| {
        let b = children(d, r).next()?;
        let broken = b.points.iter().filter(|p| p.shift_reflect == Some(false)).count();
        Some((r, b, broken))
    });
    t.line(
        "taxonomy: second Hopf near nu = 0.025, orbit not shift-reflect symmetric",
        hb2_ok.is_some_and(|(_, b, n)| n == b.points.len() && n > 0),
        match hb2_ok {
            Some((r, b, n)) => format!("on {} at nu={:.6}, orbit {}: {n}/{} points asymmetric", r.parent_label, r.nu_c, b.label, b.points.len()),
            None => "no Hopf with an orbit in range".into(),
        },
    );

    let nu2 = bif_values(&[2.0]).expect("positive")[0];
    let k2: Vec<&Branch> = family(d, "k2").collect();
    let unstable = k2.iter().all(|b| b.points.iter().all(|p| !p.stable));
    let lo = k2.iter().map(|b| b.nu_range().0).fold(f64::INFINITY, f64::min);
    let hi = k2.iter().map(|b| b.nu_range().1).fold(f64::NEG_INFINITY, f64::max);
    let covers = lo <= K2_NU_LOW && hi >= nu2 - PRIMARY_TOL;
    t.line(
        "taxonomy: k = 2 unstable throughout",
        !k2.is_empty() && unstable && covers,
        format!(
            "{} branches, {} stable points, nu covered [{lo:.5}, {hi:.5}] vs [{K2_NU_LOW}, {nu2:.5}]",
            k2.len(),
            k2.iter().flat_map(|b| b.points.iter()).filter(|p| p.stable).count()
        ),
    );
}

fn coexistence(t: &mut Tally, d: &Diagram) {
    let census = d.census(CENSUS_NU);
    let labels: Vec<&str> = census.iter().map(|a| a.label.as_str()).collect();
    let paired = census.iter().any(|a| {
        a.kappa_image
            || d.branch(&a.label)
                .and_then(|b| b.partner.as_deref())
                .is_some_and(|p| labels.contains(&p))
            || d.branches.iter().any(|b| b.partner.as_deref() == Some(a.label.as_str()) && labels.contains(&b.label.as_str()))
    });
    let desc: Vec<String> = census
        .iter()
        .map(|a| format!("{}{} (dc {:.3})", a.label, if a.kappa_image { " image" } else { "" }, a.diagram_coord))
        .collect();
    t.line(
        "coexistence at nu = 0.025",
        census.len() >= 2 && paired,
        format!("{} stable objects: {}; kappa pair present: {paired}", census.len(), desc.join(", ")),
    );
}

/// Orbit branches grown from `root`: the branch itself and those switched off it.
fn orbit_family<'a>(d: &'a Diagram, root: &'a str) -> impl Iterator<Item = &'a Branch> + 'a {
    d.branches
        .iter()
        .filter(move |b| b.kind == PointKind::Orbit && (b.label == root || b.label.starts_with(&format!("{root}_"))))
}

fn period_doubling(t: &mut Tally, d: &Diagram) {
    let roots: Vec<&str> = d
        .records
        .iter()
        .filter(|r| r.kind == EventKind::Hopf)
        .flat_map(|r| r.child_labels.iter().map(String::as_str))
        .collect();
    let mut parts = Vec::new();
    let mut all = !roots.is_empty();
    for root in &roots {
        let fam: Vec<&str> = orbit_family(d, root).map(|b| b.label.as_str()).collect();
        let pd: Vec<&BifurcationRecord> = d
            .records
            .iter()
            .filter(|r| r.kind == EventKind::PeriodDoubling && fam.contains(&r.parent_label.as_str()))
            .collect();
        let direct = pd.iter().filter(|r| r.parent_label == *root).count();
        all &= !pd.is_empty();
        let at: Vec<String> = pd.iter().map(|r| format!("{} at {:.6}", r.parent_label, r.nu_c)).collect();
        parts.push(format!("{root}: {} ({direct} on the direct branch) [{}]", pd.len(), at.join(", ")));
    }
    t.line("period doubling on each orbit family", all, parts.join("; "));

    let ppf = d
        .records_on("orbit_hb1")
        .filter(|r| r.kind == EventKind::OrbitPitchfork)
        .find_map(|r| {
            let b = children(d, r).next()?;
            Some((r, b, b.points.iter().filter(|p| p.shift_reflect == Some(false)).count()))
        });
    t.line(
        "orbit pitchfork on the HB1 orbit breaks shift-reflect symmetry",
        ppf.is_some_and(|(_, b, n)| n == b.points.len() && n > 0),
        match ppf {
            Some((r, b, n)) => format!("at nu={:.6}, child {}: {n}/{} points asymmetric", r.nu_c, b.label, b.points.len()),
            None => "no orbit pitchfork with a child on orbit_hb1".into(),
        },
    );
}

fn solver_contracts(t: &mut Tally, d: &Diagram, st: &ContinuationSettings) {
    let pts: Vec<_> = d.branches.iter().flat_map(|b| b.points.iter()).collect();
    let worst = pts.iter().map(|p| p.residual).fold(0.0, f64::max);
    t.line(
        "solver: accepted residuals",
        worst <= RESIDUAL_TOL,
        format!("worst {worst:.2e} over {} points", pts.len()),
    );

    let mut sorted: Vec<f64> = pts
        .iter()
        .flat_map(|p| p.newton.residuals.windows(2).filter(|w| w[0] >= QUADRATIC_FROM).map(|w| w[1] / (w[0] * w[0])))
        .filter(|r| r.is_finite())
        .collect();
    sorted.sort_by(f64::total_cmp);
    let q = |f: f64| sorted.get(((sorted.len() as f64 - 1.0) * f) as usize).copied().unwrap_or(f64::NAN);
    t.line(
        "solver: quadratic convergence ratio",
        !sorted.is_empty() && q(0.95) <= QUADRATIC_RATIO_MAX,
        format!(
            "{} steps from r >= {QUADRATIC_FROM:e}: median {:.2e}, 95% {:.2e} (bound {QUADRATIC_RATIO_MAX}), max {:.2e}",
            sorted.len(),
            q(0.5),
            q(0.95),
            q(1.0)
        ),
    );

    let mut its: Vec<usize> = pts
        .iter()
        .filter(|p| p.point.grid().order() == st.coarse_order)
        .flat_map(|p| p.newton.gmres_iterations.iter().copied())
        .collect();
    its.sort_unstable();
    let median = if its.is_empty() { f64::NAN } else { its[its.len() / 2] as f64 };
    t.line(
        "solver: median GMRES iterations at N = 32",
        median <= GMRES_MEDIAN_MAX,
        format!("median {median} over {} Newton steps", its.len()),
    );

    let refined = ContinuationSettings {
        coarse_order: 2 * st.coarse_order,
        fine_order: 2 * st.fine_order,
        h: st.h / 2.0,
        newton: NewtonSettings { residual_tol: REFINE_TOL, ..st.newton.clone() },
        ..st.clone()
    };
    let moves: Vec<std::result::Result<(String, f64, f64), String>> = match Continuer::new(refined) {
        Ok(cont) => SPOT_CHECKS
            .iter()
            .map(|&(label, nu)| {
                let b = d.branch(label).ok_or(format!("{label} missing"))?;
                let p = b
                    .points
                    .iter()
                    .filter(|p| p.point.grid().order() == st.coarse_order)
                    .min_by(|a, c| (a.nu() - nu).abs().total_cmp(&(c.nu() - nu).abs()))
                    .ok_or(format!("{label} has no coarse point"))?;
                let s = cont.solve_fixed(&p.point).map_err(|e| format!("{label}: {e}"))?;
                let diff = &s.point.u - &p.point.u.resample(s.point.grid());
                Ok((label.to_string(), p.nu(), diff.norm2()))
            })
            .collect(),
        Err(e) => vec![Err(e.to_string())],
    };
    let pass = moves.iter().all(|m| m.as_ref().is_ok_and(|x| x.2 <= REFINEMENT_TOL));
    let desc: Vec<String> = moves
        .iter()
        .map(|m| match m {
            Ok((l, nu, dn)) => format!("{l} at nu={nu:.4}: {dn:.1e}"),
            Err(e) => e.clone(),
        })
        .collect();
    t.line("solver: refinement to (2N, h/2)", pass, desc.join("; "));
}
