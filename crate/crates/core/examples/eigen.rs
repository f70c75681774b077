//! Growth rates of the zero state against `k^2 pi^2 - nu k^4 pi^4`.
use std::f64::consts::PI;

use ks_dirichlet::eigen::equilibrium_spectrum_at;
use ks_dirichlet::grid::{make_grid, Field};

fn main() -> ks_dirichlet::Result<()> {
    let (nu, h) = (0.12, 1e-3);
    let g = make_grid(32)?;
    let spec = equilibrium_spectrum_at(&Field::zeros(&g), nu, h, 1.0, 5)?;
    let mut rates: Vec<f64> = spec.generator_rates(h).iter().map(|r| r.re).collect();
    rates.sort_by(|a, b| b.total_cmp(a));
    for (k, r) in [0.5, 1.0, 1.5].iter().zip(rates) {
        let kp = k * PI;
        let exact = kp * kp - nu * kp.powi(4);
        println!("k = {k}: computed {r:.8}, exact {exact:.8}");
    }
    println!("multipliers: {:?}", spec.ritz_values);
    Ok(())
}
