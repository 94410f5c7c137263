//! Obstacle problem on the unit square: a constant downward load presses the
//! membrane onto the plane chi = -1. Each adaptive level reports the energy,
//! the contact set, and the nodal minimum, which must never dip below the
//! obstacle.
//!
//! ```bash
//! cargo run --example obstacle_contact
//! ```

use estconv::marking::{mark, MarkingConfig, Strategy};
use estconv::mesh2d::Mesh2D;
use estconv::obstacle::{estimate_obstacle, solve_obstacle, AffineObstacle, ObstacleProblem};
use estconv::poisson::{prolong, Load};

fn main() -> estconv::Result<()> {
    let prob = ObstacleProblem {
        f: Load::constant(-20.0),
        chi: AffineObstacle::constant(-1.0),
    };
    let marking = MarkingConfig { strategy: Strategy::DoerflerSorted, theta: 0.5 };

    let mut mesh = Mesh2D::unit_square();
    let mut sol = solve_obstacle(&mesh, &prob, None)?;
    println!(
        "{:>5} {:>9} {:>12} {:>9} {:>10} {:>7}",
        "level", "elements", "energy", "contact", "min u", "sweeps"
    );
    for level in 0..10 {
        let min_u = sol.u.nodal_values().iter().copied().fold(f64::INFINITY, f64::min);
        println!(
            "{:>5} {:>9} {:>12.6} {:>9} {:>10.6} {:>7}",
            level,
            mesh.n_elements(),
            sol.energy,
            sol.active.len(),
            min_u,
            sol.sweeps
        );
        if level == 9 {
            break;
        }
        let indicators = estimate_obstacle(&mesh, &prob, &sol.u)?;
        let marked = mark(&indicators, &marking)?;
        let (fine, map) = mesh.refine_nvb(&marked)?;
        // warm start from the prolonged coarse solution
        let guess = prolong(&sol.u, &map, &fine)?;
        sol = solve_obstacle(&fine, &prob, Some(&guess))?;
        mesh = fine;
    }
    Ok(())
}
