//! The two estimator axioms become near-identities when the solution is
//! frozen: prolong the coarse Galerkin solution to the refined mesh and
//! re-estimate. Unrefined elements keep their indicators exactly (stability
//! with zero slack); refined ones shrink by the mesh-size factor (reduction
//! at q = 2^{-1/2}).
//!
//! ```bash
//! cargo run --example frozen_estimator
//! ```

use std::f64::consts::FRAC_1_SQRT_2;

use estconv::axioms::{check_reduction, check_stability, LevelRecord};
use estconv::mesh2d::Mesh2D;
use estconv::poisson::{estimate_residual, prolong, solve, Load};

fn main() -> estconv::Result<()> {
    let f = Load::constant(1.0);
    let (mesh, _) = Mesh2D::l_shape().refine_all()?;
    let (mesh, _) = mesh.refine_all()?;
    let u = solve(&mesh, &f, None)?;
    let indicators = estimate_residual(&mesh, &f, &u)?;

    // refine every other element and keep the solution fixed
    let marked: Vec<usize> = (0..mesh.n_elements()).step_by(2).collect();
    let (fine, map) = mesh.refine_nvb(&marked)?;
    let frozen = prolong(&u, &map, &fine)?;
    let fine_indicators = estimate_residual(&fine, &f, &frozen)?;

    let coarse_rec = LevelRecord {
        level: 0,
        mesh: mesh.id,
        indicators,
        energy: 0.0,
        marked,
        map_to_next: Some(map),
        diff_to_next: Some(0.0),
    };
    let fine_rec = LevelRecord {
        level: 1,
        mesh: fine.id,
        indicators: fine_indicators,
        energy: 0.0,
        marked: Vec::new(),
        map_to_next: None,
        diff_to_next: None,
    };

    let stab = check_stability(&coarse_rec, &fine_rec, 10.0)?;
    println!(
        "stability:  eta(kept, fine) - eta(kept, coarse) = {:+.3e}  (pass: {})",
        stab.slack, stab.pass
    );
    let red = check_reduction(&coarse_rec, &fine_rec, FRAC_1_SQRT_2, 10.0)?;
    println!(
        "reduction:  eta^2(new) - q eta^2(refined) = {:+.3e}  (pass: {})",
        red.residual, red.pass
    );
    Ok(())
}
