//! Lyapunov-Schmidt coefficients at the `k = n - 1/2` bifurcations.
use ks_dirichlet::grid::make_grid;
use ks_dirichlet::lsred::{amplitude_prediction, bif_values, ls_coefficients, ls_verify};

fn main() -> ks_dirichlet::Result<()> {
    println!("bifurcation values for k = 1/2, 1, 3/2, 2: {:?}", bif_values(&[0.5, 1.0, 1.5, 2.0])?);
    let g = make_grid(64)?;
    for n in 1..=3 {
        let c = ls_coefficients(n)?;
        println!(
            "n={n}: nu*={:.6} g_y3={} w_y2={:.6e} g_ynu -beta^2={:.4} beta^4={:?}",
            c.nu_star, c.g_y3, c.w_y2_amplitude, c.g_ynu_neg_beta2, c.g_ynu_oracle
        );
        let r = ls_verify(n, &g)?;
        for ch in &r.checks {
            println!("    {}: {:.12} vs {:.12}", ch.name, ch.quadrature, ch.analytic);
        }
    }
    println!("predicted amplitude at nu = 0.40: {:.4}", amplitude_prediction(1, 0.40)?);
    Ok(())
}
