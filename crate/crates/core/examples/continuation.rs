//! Trivial branch down to nu = 0.09, then a switch onto the k = 1/2 family.
use ks_dirichlet::continuation::{trivial_start, write_branch, ContinuationSettings, Continuer, EventKind};

fn main() -> ks_dirichlet::Result<()> {
    let cont = Continuer::new(ContinuationSettings { nu_min: 0.09, max_points: 150, ..Default::default() })?;
    let start = trivial_start(cont.coarse_grid(), 0.5, 1.0);
    let trivial = cont.continue_branch(&start, -1.0, None, "trivial")?;
    println!("trivial: {} points, stop: {}", trivial.points.len(), trivial.stop);
    let (recs, fails) = cont.detect_events(&trivial);
    for r in &recs {
        println!("  {} at nu = {:.6}, vector class {:?}", r.kind.as_str(), r.nu_c, r.vector_class);
    }
    assert!(fails.is_empty(), "{fails:?}");

    let r = recs.iter().find(|r| r.kind == EventKind::Pitchfork).expect("a pitchfork");
    let kids = cont.branch_switch(r, 0.05)?;
    let child = cont.continue_branch(&kids[0].0, -1.0, Some(kids[0].1.clone()), "k1_2")?;
    let (lo, hi) = child.nu_range();
    println!("k1_2: {} points over nu in [{lo:.4}, {hi:.4}], stop: {}", child.points.len(), child.stop);
    for p in child.points.iter().step_by(30) {
        println!("  nu = {:.5}  ||u|| = {:.5}  stable {}", p.nu(), p.point.u.norm2(), p.stable);
    }
    let dir = std::env::temp_dir().join("ks_continuation");
    write_branch(&dir, &child)?;
    println!("wrote {}", dir.display());
    Ok(())
}
