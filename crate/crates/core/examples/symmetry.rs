//! Kernel functions, the reflection kappa and the periodic odd extension.
use ks_dirichlet::grid::make_grid;
use ks_dirichlet::symmetry::{
    classify_kappa, diagram_coord, extend_periodic, kappa, periodic_residual, KernelFunction, Parity, CLASSIFY_TOL,
};

fn main() -> ks_dirichlet::Result<()> {
    let g = make_grid(32)?;
    for (n, parity) in [(1, Parity::Even), (1, Parity::Odd), (2, Parity::Even), (2, Parity::Odd)] {
        let e = KernelFunction::new(&g, n, parity)?;
        println!(
            "{parity:?} n={n}: k={}, class under kappa {}, diagram coordinate {:.4}",
            e.wave_number(),
            classify_kappa(&e.values, CLASSIFY_TOL).as_str(),
            diagram_coord(&e.values)
        );
    }
    let mixed = &KernelFunction::new(&g, 1, Parity::Even)?.values + &KernelFunction::new(&g, 1, Parity::Odd)?.values;
    println!("mixed state: {}", classify_kappa(&mixed, CLASSIFY_TOL).as_str());
    let back = kappa(&kappa(&mixed));
    println!("kappa is an involution: {:.1e}", (&back - &mixed).norm2());

    // the zero state extends to a steady periodic solution
    let z = ks_dirichlet::grid::Field::zeros(&g);
    let ext = extend_periodic(&z, 64)?;
    println!("periodic residual of the extended zero state: {:.1e}", periodic_residual(&ext, 0.1)?);
    Ok(())
}
