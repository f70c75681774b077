//! Green's-function tables for `L = h nu D^4 + h D^2 + 1` with clamped ends.
use ks_dirichlet::greens::{apply, apply_operator_spectral, assemble_tables, char_roots, OperatorParams};
use ks_dirichlet::grid::{make_grid, Field};

fn main() -> ks_dirichlet::Result<()> {
    let (h, nu) = (1e-3, 0.1);
    let p = OperatorParams::new(h, nu)?;
    println!("characteristic roots: {:?}", char_roots(p));

    let g = make_grid(32)?;
    let t = assemble_tables(&g, p)?;
    // u = G * f solves L u = f with u = u' = 0 at both ends
    let f = Field::from_fn(&g, |x| 1.0 + x * x * x);
    let u = apply(&t.k0, &f)?;
    let lu = apply_operator_spectral(&g, p, u.values());
    let n = g.len();
    let interior = (1..n - 1).map(|i| (lu[i] - f.values()[i]).abs()).fold(0.0, f64::max);
    println!("max |L(G*f) - f| at interior nodes: {interior:.2e}");
    println!("u at the ends: {:.1e}, {:.1e}", u.values()[0], u.values()[n - 1]);
    println!("table sizes {}x{}", t.k0.nrows(), t.k0.ncols());
    Ok(())
}
