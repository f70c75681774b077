//! Chebyshev grid basics: interpolation, quadrature and differentiation.
use ks_dirichlet::grid::{make_grid, Field};

fn main() -> ks_dirichlet::Result<()> {
    let g = make_grid(32)?;
    let f = Field::from_fn(&g, |x| (1.5 * std::f64::consts::PI * x).cos());
    println!("N = {}, {} nodes, midpoint index {}", g.order(), g.len(), g.mid_index());

    let x = 0.3217;
    let exact = (1.5 * std::f64::consts::PI * x).cos();
    println!("interpolation at x={x}: error {:.2e}", (f.interpolate(x)? - exact).abs());

    // int_{-1}^{1} cos(3 pi x / 2) dx = -4 / (3 pi)
    let q = f.quad();
    println!("quadrature error {:.2e}", (q + 4.0 / (3.0 * std::f64::consts::PI)).abs());
    println!("L2 norm {:.12}, boundary defect {:.1e}", f.norm2(), f.boundary_defect());

    let d = g.differentiation_matrix();
    let df = &d * nalgebra::DVector::from_column_slice(f.values());
    let err = g
        .nodes()
        .iter()
        .zip(df.iter())
        .map(|(&x, &v)| (v + 1.5 * std::f64::consts::PI * (1.5 * std::f64::consts::PI * x).sin()).abs())
        .fold(0.0, f64::max);
    println!("derivative error {err:.2e}");

    let fine = make_grid(64)?;
    println!("resampled norm on N=64: {:.12}", f.resample(&fine).norm2());
    Ok(())
}
