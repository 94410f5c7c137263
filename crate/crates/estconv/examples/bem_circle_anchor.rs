//! A boundary-element anchor with a closed form: on a circle of radius 1/4
//! the single-layer equation V phi = V 1 has the constant solution phi = 1,
//! with energy 2 pi r log(1/r). A 64-gon inscribed in that circle reproduces
//! both to quadrature accuracy.
//!
//! ```bash
//! cargo run --example bem_circle_anchor
//! ```

use estconv::bem::{build_system, energy, estimate_weaksing, potential_data, solve_symm, P0Density};
use estconv::boundary_mesh::BoundaryMesh;

fn main() -> estconv::Result<()> {
    let mesh = BoundaryMesh::regular_polygon(64, 0.25)?;
    let ones = P0Density { mesh: mesh.id, coefficients: vec![1.0; mesh.n_segments()] };

    // right-hand side: the single-layer potential of the unit density itself
    let data = potential_data(&mesh, &ones)?;
    let system = build_system(&mesh, &data);
    let density = solve_symm(&system)?;

    let worst = density
        .coefficients
        .iter()
        .map(|c| (c - 1.0).abs())
        .fold(0.0, f64::max);
    println!("64-gon, radius 1/4, {} segments", mesh.n_segments());
    println!("largest deviation of the density from 1: {worst:.3e}");

    let discrete = energy(&system, &density)?;
    let reference = std::f64::consts::PI * 4.0_f64.ln() / 8.0;
    println!(
        "energy {discrete:.8} vs 2*pi*(1/4)*log(4)/4 = {reference:.8} ({:+.3e} relative)",
        (discrete - reference) / reference
    );

    let indicators = estimate_weaksing(&mesh, &data, &density)?;
    println!("weighted-residual estimator on the solution: eta = {:.3e}", indicators.total());
    Ok(())
}
