//! Newton-GMRES for a steady state of the time-1 map at fixed viscosity.
use ks_dirichlet::grid::make_grid;
use ks_dirichlet::newton::{newton_solve, Constraint, ContinuationPoint, NewtonSettings};
use ks_dirichlet::symmetry::{KernelFunction, Parity};

fn main() -> ks_dirichlet::Result<()> {
    let g = make_grid(32)?;
    let nu = 0.40;
    let guess = ContinuationPoint::equilibrium(KernelFunction::new(&g, 1, Parity::Even)?.values, nu, 1.0);
    let s = NewtonSettings::default();
    let sol = newton_solve(&guess, &s, 1e-3, Constraint::None)?;
    println!("converged: ||u|| = {:.6} at nu = {nu}", sol.point.u.norm2());
    println!("residuals {:?}", sol.report.residuals);
    println!("GMRES iterations {:?}", sol.report.gmres_iterations);
    Ok(())
}
