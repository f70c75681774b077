//! The scripted diagram restricted to nu >= 0.06: the k = 1/2 loop, the upper
//! part of the k = 1 family and the secondary events found there.
use ks_dirichlet::continuation::ContinuationSettings;
use ks_dirichlet::scenario::{trace_diagram, DiagramSettings};

fn main() -> ks_dirichlet::Result<()> {
    let s = DiagramSettings {
        continuation: ContinuationSettings { nu_min: 0.06, ..Default::default() },
        secondary_points: 200,
        census_nu: 0.08,
        ..Default::default()
    };
    let d = trace_diagram(&s, &mut |m| eprintln!("{m}"))?;
    for b in &d.branches {
        let (lo, hi) = b.nu_range();
        println!("{:<16} {:>5} points  nu in [{lo:.4}, {hi:.4}]", b.label, b.points.len());
    }
    for r in &d.records {
        println!("{} on {} at nu = {:.6} -> {:?} {}", r.kind.as_str(), r.parent_label, r.nu_c, r.child_labels, r.note);
    }
    for a in d.census(s.census_nu) {
        println!("stable at nu = {}: {} (diagram coordinate {:.3})", s.census_nu, a.label, a.diagram_coord);
    }
    let out = std::env::temp_dir().join("ks_scenario");
    d.write(&out, s.census_nu)?;
    println!("wrote {}", out.display());
    Ok(())
}
