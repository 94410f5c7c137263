//! Discrete obstacle problem: minimize the Dirichlet energy over P1
//! functions constrained to lie above an affine obstacle.
//!
//! The minimizer is computed by projected SOR sweeps on the stiffness
//! system, projecting each nodal update onto [χ(z), ∞). The estimator adds
//! data-oscillation terms to the gradient jumps: per interior edge the load
//! is compared against its mean over the two-element patch, and boundary
//! edges contribute the plain load norm.

use crate::error::{Error, Result};
use crate::linalg::SparseSpd;
use crate::marking::IndicatorField;
use crate::mesh2d::Mesh2D;
use crate::poisson::{assemble, element_gradient, DiscreteFunction, Load};

/// Affine obstacle χ(x, y) = a·x + b·y + c.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineObstacle {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AffineObstacle {
    pub fn constant(c: f64) -> AffineObstacle {
        AffineObstacle { a: 0.0, b: 0.0, c }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

#[derive(Clone, Debug)]
pub struct ObstacleProblem {
    pub f: Load,
    pub chi: AffineObstacle,
}

impl ObstacleProblem {
    /// The zero boundary data must be admissible: χ ≤ 0 at every boundary
    /// vertex (χ is affine, so vertex checks cover the whole boundary).
    pub fn validate_on(&self, mesh: &Mesh2D) -> Result<()> {
        for &(a, b) in &mesh.boundary_edges {
            for v in [a, b] {
                let p = mesh.vertices[v];
                let chi = self.chi.eval(p.x, p.y);
                if chi > 0.0 {
                    return Err(Error::precondition(format!(
                        "obstacle is {chi} > 0 at boundary vertex {v}; \
                         zero boundary data would be inadmissible"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ObstacleSolution {
    pub u: DiscreteFunction,
    /// Dofs where the solution touches the obstacle (within 1e-10).
    pub active: Vec<usize>,
    /// E(u) = u^T K u / 2 − F^T u at the solver output.
    pub energy: f64,
    pub sweeps: usize,
}

const OMEGA: f64 = 1.5;
const ACTIVE_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100_000;

/// One pass of projected SOR over the given dof order; returns the largest
/// nodal update.
fn psor_sweep(
    matrix: &SparseSpd,
    load: &[f64],
    chi: &[f64],
    x: &mut [f64],
    order: &[usize],
) -> f64 {
    let mut max_update = 0.0f64;
    for &i in order {
        let mut diag = 0.0;
        let mut off = 0.0;
        for (j, v) in matrix.row(i) {
            if j == i {
                diag = v;
            } else {
                off += v * x[j];
            }
        }
        let gauss_seidel = (load[i] - off) / diag;
        let relaxed = (1.0 - OMEGA) * x[i] + OMEGA * gauss_seidel;
        let projected = relaxed.max(chi[i]);
        max_update = max_update.max((projected - x[i]).abs());
        x[i] = projected;
    }
    max_update
}

fn psor(
    matrix: &SparseSpd,
    load: &[f64],
    chi: &[f64],
    x: &mut [f64],
    order: &[usize],
) -> Result<usize> {
    for sweep in 1..=MAX_SWEEPS {
        let update = psor_sweep(matrix, load, chi, x, order);
        let scale = 1.0 + x.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if update <= 1e-10 * scale {
            return Ok(sweep);
        }
    }
    let last = psor_sweep(matrix, load, chi, x, order);
    Err(Error::Solver {
        what: format!("projected SOR did not settle within {MAX_SWEEPS} sweeps"),
        residual: last,
    })
}

/// Solves the obstacle problem, optionally warm-starting from a function on
/// the same mesh (its values are projected onto the admissible set first).
pub fn solve_obstacle(
    mesh: &Mesh2D,
    prob: &ObstacleProblem,
    guess: Option<&DiscreteFunction>,
) -> Result<ObstacleSolution> {
    prob.validate_on(mesh)?;
    let (space, matrix, load) = assemble(mesh, &prob.f);
    let chi: Vec<f64> = space
        .dof_of_vertex
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_some())
        .map(|(v, _)| {
            let p = mesh.vertices[v];
            prob.chi.eval(p.x, p.y)
        })
        .collect();

    let mut x = match guess {
        Some(g) if g.space.mesh == mesh.id && g.coefficients.len() == space.n_dofs => {
            g.coefficients.clone()
        }
        _ => vec![0.0; space.n_dofs],
    };
    for (xi, &ci) in x.iter_mut().zip(&chi) {
        *xi = xi.max(ci);
    }

    let order: Vec<usize> = (0..space.n_dofs).collect();
    let sweeps = if space.n_dofs > 0 {
        psor(&matrix, &load, &chi, &mut x, &order)?
    } else {
        0
    };

    let active: Vec<usize> = (0..space.n_dofs)
        .filter(|&i| x[i] - chi[i] <= ACTIVE_TOL)
        .collect();
    let energy = 0.5 * matrix.quadratic_form(&x) - crate::linalg::dot(&load, &x);
    Ok(ObstacleSolution {
        u: DiscreteFunction { space, coefficients: x },
        active,
        energy,
        sweeps,
    })
}

/// E(v) = v^T K v / 2 − F^T v for any function on the mesh, using the
/// problem's own assembly.
pub fn energy_of(mesh: &Mesh2D, prob: &ObstacleProblem, v: &DiscreteFunction) -> f64 {
    let (_, matrix, load) = assemble(mesh, &prob.f);
    0.5 * matrix.quadratic_form(&v.coefficients) - crate::linalg::dot(&load, &v.coefficients)
}

/// Error indicators for the obstacle problem. Per element,
/// η(T)² = h_T·Σ_E ⟦∂_n u⟧²|E| + h_T²·(#boundary edges of T)·‖f‖²_{L²(T)}
///       + h_T²·Σ_{interior E} ‖f − f_E‖²_{L²(T)},
/// with f_E the mean of f over the two elements sharing E. With
/// `patch_norms` the oscillation is integrated over the whole edge patch
/// instead of T alone; the default keeps the per-element form.
pub fn estimate_obstacle_with(
    mesh: &Mesh2D,
    prob: &ObstacleProblem,
    u: &DiscreteFunction,
    patch_norms: bool,
) -> Result<IndicatorField> {
    if u.space.mesh != mesh.id {
        return Err(Error::precondition(
            "function does not live on this mesh".to_string(),
        ));
    }
    let n = mesh.n_elements();
    let nodal = u.nodal_values();
    let grads: Vec<[f64; 2]> = (0..n).map(|e| element_gradient(mesh, &nodal, e)).collect();
    let areas: Vec<f64> = (0..n).map(|e| mesh.element_area(e)).collect();
    let int_f: Vec<f64> = (0..n)
        .map(|e| prob.f.integral(mesh.element_points(e), areas[e]))
        .collect();
    let int_f2: Vec<f64> = (0..n)
        .map(|e| prob.f.integral_sq(mesh.element_points(e), areas[e]))
        .collect();

    let mut jump_term = vec![0.0; n];
    let mut osc_term = vec![0.0; n];
    let mut boundary_count = vec![0usize; n];
    let (edges, elems) = mesh.edge_incidence();
    for (&(a, b), adj) in edges.iter().zip(&elems) {
        if adj.len() == 1 {
            boundary_count[adj[0]] += 1;
            continue;
        }
        let (t1, t2) = (adj[0], adj[1]);
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let len = pa.dist(pb);
        let normal = [(pb.y - pa.y) / len, (pa.x - pb.x) / len];
        let dg = [grads[t1][0] - grads[t2][0], grads[t1][1] - grads[t2][1]];
        let jump = dg[0] * normal[0] + dg[1] * normal[1];
        let f_mean = (int_f[t1] + int_f[t2]) / (areas[t1] + areas[t2]);
        // ∫(f − c)² expanded through the element moments of f.
        let osc_on = |t: usize| {
            (int_f2[t] - 2.0 * f_mean * int_f[t] + f_mean * f_mean * areas[t]).max(0.0)
        };
        let patch_osc = osc_on(t1) + osc_on(t2);
        for &t in adj {
            jump_term[t] += jump * jump * len;
            osc_term[t] += if patch_norms { patch_osc } else { osc_on(t) };
        }
    }

    let values = (0..n)
        .map(|t| {
            let h_sq = areas[t];
            let h = h_sq.sqrt();
            let eta_sq = h * jump_term[t]
                + h_sq * boundary_count[t] as f64 * int_f2[t]
                + h_sq * osc_term[t];
            eta_sq.sqrt()
        })
        .collect();
    IndicatorField::new(mesh.id, values)
}

pub fn estimate_obstacle(
    mesh: &Mesh2D,
    prob: &ObstacleProblem,
    u: &DiscreteFunction,
) -> Result<IndicatorField> {
    estimate_obstacle_with(mesh, prob, u, false)
}
