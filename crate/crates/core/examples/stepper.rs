//! Time stepping: a small perturbation at nu = 0.38 grows onto the first
//! nontrivial equilibrium.
use ks_dirichlet::grid::make_grid;
use ks_dirichlet::stepper::flow_with_trace;
use ks_dirichlet::symmetry::{KernelFunction, Parity};

fn main() -> ks_dirichlet::Result<()> {
    let g = make_grid(32)?;
    let u0 = KernelFunction::new(&g, 1, Parity::Even)?.values.scaled(0.1);
    let (u, trace) = flow_with_trace(&u0, 60.0, 0.38, 1e-3, 5000)?;
    for (t, row) in &trace.rows {
        println!("t = {t:6.1}  ||u|| = {:.6}", g.norm2_values(row));
    }
    println!("final norm {:.6}", u.norm2());
    let path = std::env::temp_dir().join("ks_stepper_spacetime.csv");
    trace.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
