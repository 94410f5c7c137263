//! P1 finite elements for the Poisson problem with zero Dirichlet data,
//! the elementwise residual error estimator, and transfer of solutions to
//! refined meshes.
//!
//! Estimator convention: for each element T,
//! η(T)² = h_T²·‖f‖²_{L²(T)} + h_T·Σ_E ‖⟦∂_n u⟧‖²_{L²(E)} with h_T = |T|^{1/2},
//! the sum running over the interior edges of T. Each interior edge
//! contributes its full jump to both adjacent elements; boundary edges
//! contribute nothing.

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::linalg::{solve_spd, SparseSpd};
use crate::marking::IndicatorField;
use crate::mesh2d::Mesh2D;
use crate::quadrature::{integrate_triangle, triangle_rule_deg5};
use crate::refinement::{MeshId, RefinementMap};
use std::collections::BTreeSet;
use std::sync::Arc;

/// Right-hand side of −Δu = f. Constants integrate exactly; general fields
/// are integrated by the fixed degree-5 rule and treated as exact under it.
#[derive(Clone)]
pub enum Load {
    Constant(f64),
    Field(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl Load {
    pub fn constant(c: f64) -> Load {
        Load::Constant(c)
    }

    pub fn from_fn(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Load {
        Load::Field(Arc::new(f))
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Load::Constant(c) => *c,
            Load::Field(f) => f(x, y),
        }
    }

    /// ∫_T f over the triangle.
    pub fn integral(&self, p: [Point; 3], area: f64) -> f64 {
        match self {
            Load::Constant(c) => c * area,
            Load::Field(f) => integrate_triangle(p[0], p[1], p[2], area, &|x, y| f(x, y)),
        }
    }

    /// ∫_T f² over the triangle.
    pub fn integral_sq(&self, p: [Point; 3], area: f64) -> f64 {
        match self {
            Load::Constant(c) => c * c * area,
            Load::Field(f) => {
                integrate_triangle(p[0], p[1], p[2], area, &|x, y| {
                    let v = f(x, y);
                    v * v
                })
            }
        }
    }
}

impl std::fmt::Debug for Load {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Load::Constant(c) => write!(f, "Load::Constant({c})"),
            Load::Field(_) => write!(f, "Load::Field(..)"),
        }
    }
}

/// Dof layout of the P1 space on a mesh: interior vertices carry unknowns in
/// ascending vertex order, boundary vertices are constrained to zero.
#[derive(Clone, Debug)]
pub struct P1Space {
    pub mesh: MeshId,
    pub dof_of_vertex: Vec<Option<usize>>,
    pub n_dofs: usize,
    pub n_constrained: usize,
}

impl P1Space {
    pub fn new(mesh: &Mesh2D) -> P1Space {
        let mut on_boundary = vec![false; mesh.n_vertices()];
        for &(a, b) in &mesh.boundary_edges {
            on_boundary[a] = true;
            on_boundary[b] = true;
        }
        let mut dof_of_vertex = vec![None; mesh.n_vertices()];
        let mut n_dofs = 0;
        for (v, slot) in dof_of_vertex.iter_mut().enumerate() {
            if !on_boundary[v] {
                *slot = Some(n_dofs);
                n_dofs += 1;
            }
        }
        P1Space {
            mesh: mesh.id,
            dof_of_vertex,
            n_dofs,
            n_constrained: mesh.n_vertices() - n_dofs,
        }
    }
}

/// A P1 function given by its interior-vertex coefficients; boundary
/// vertices are implicitly zero.
#[derive(Clone, Debug)]
pub struct DiscreteFunction {
    pub space: P1Space,
    pub coefficients: Vec<f64>,
}

impl DiscreteFunction {
    pub fn zero(space: P1Space) -> DiscreteFunction {
        let coefficients = vec![0.0; space.n_dofs];
        DiscreteFunction { space, coefficients }
    }

    /// Values at every vertex, including the constrained zeros.
    pub fn nodal_values(&self) -> Vec<f64> {
        self.space
            .dof_of_vertex
            .iter()
            .map(|d| d.map_or(0.0, |i| self.coefficients[i]))
            .collect()
    }

    /// Rebuilds a function from per-vertex values, checking the constraint.
    pub fn from_nodal(space: P1Space, nodal: &[f64]) -> Result<DiscreteFunction> {
        if nodal.len() != space.dof_of_vertex.len() {
            return Err(Error::precondition(format!(
                "nodal vector has {} entries for {} vertices",
                nodal.len(),
                space.dof_of_vertex.len()
            )));
        }
        let mut coefficients = vec![0.0; space.n_dofs];
        for (v, d) in space.dof_of_vertex.iter().enumerate() {
            match d {
                Some(i) => coefficients[*i] = nodal[v],
                None if nodal[v] != 0.0 => {
                    return Err(Error::precondition(format!(
                        "boundary vertex {v} carries nonzero value {}",
                        nodal[v]
                    )))
                }
                None => {}
            }
        }
        Ok(DiscreteFunction { space, coefficients })
    }
}

/// Gradients of the three barycentric basis functions on a triangle.
pub fn basis_gradients(p: [Point; 3], area: f64) -> [[f64; 2]; 3] {
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let pj = p[(i + 1) % 3];
        let pk = p[(i + 2) % 3];
        g[i] = [(pj.y - pk.y) / (2.0 * area), (pk.x - pj.x) / (2.0 * area)];
    }
    g
}

/// Constant gradient of a P1 function on element `e`.
pub fn element_gradient(mesh: &Mesh2D, nodal: &[f64], e: usize) -> [f64; 2] {
    let p = mesh.element_points(e);
    let area = mesh.element_area(e);
    let g = basis_gradients(p, area);
    let t = &mesh.elements[e];
    let mut grad = [0.0, 0.0];
    for i in 0..3 {
        grad[0] += nodal[t.v[i]] * g[i][0];
        grad[1] += nodal[t.v[i]] * g[i][1];
    }
    grad
}

/// Assembles the interior-dof stiffness matrix and load vector.
pub fn assemble(mesh: &Mesh2D, f: &Load) -> (P1Space, SparseSpd, Vec<f64>) {
    let space = P1Space::new(mesh);
    let mut triplets = Vec::new();
    let mut load = vec![0.0; space.n_dofs];
    let rule = triangle_rule_deg5();
    for e in 0..mesh.n_elements() {
        let p = mesh.element_points(e);
        let area = mesh.element_area(e);
        let g = basis_gradients(p, area);
        let t = &mesh.elements[e];
        for i in 0..3 {
            let Some(di) = space.dof_of_vertex[t.v[i]] else { continue };
            for j in 0..3 {
                if let Some(dj) = space.dof_of_vertex[t.v[j]] {
                    let k = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                    triplets.push((di, dj, k));
                }
            }
            let mut fi = 0.0;
            for (lambda, w) in rule {
                let x = lambda[0] * p[0].x + lambda[1] * p[1].x + lambda[2] * p[2].x;
                let y = lambda[0] * p[0].y + lambda[1] * p[1].y + lambda[2] * p[2].y;
                fi += w * f.eval(x, y) * lambda[i];
            }
            load[di] += area * fi;
        }
    }
    let matrix = SparseSpd::from_triplets(space.n_dofs, &triplets);
    (space, matrix, load)
}

/// Solves the Poisson problem on the mesh, optionally warm-starting the
/// iterative solver from a function already living on this mesh.
pub fn solve(mesh: &Mesh2D, f: &Load, guess: Option<&DiscreteFunction>) -> Result<DiscreteFunction> {
    let (space, matrix, load) = assemble(mesh, f);
    let x0 = match guess {
        Some(g) if g.space.mesh == mesh.id && g.coefficients.len() == space.n_dofs => {
            Some(g.coefficients.as_slice())
        }
        _ => None,
    };
    let coefficients = solve_spd(&matrix, &load, x0)?;
    Ok(DiscreteFunction { space, coefficients })
}

/// Carries a P1 function to the refined mesh by linear interpolation; the
/// result is the same function, so all energy quantities are preserved.
pub fn prolong(u: &DiscreteFunction, map: &RefinementMap, fine: &Mesh2D) -> Result<DiscreteFunction> {
    if u.space.mesh != map.coarse {
        return Err(Error::precondition(
            "function does not live on the map's coarse mesh".to_string(),
        ));
    }
    if fine.id != map.fine {
        return Err(Error::precondition(
            "target mesh is not the map's fine mesh".to_string(),
        ));
    }
    let fine_nodal = map.carry_vertex_values(&u.nodal_values())?;
    DiscreteFunction::from_nodal(P1Space::new(fine), &fine_nodal)
}

/// ‖∇u‖²_{L²(Ω)}, summed element by element.
pub fn energy_norm_sq(mesh: &Mesh2D, u: &DiscreteFunction) -> f64 {
    let nodal = u.nodal_values();
    (0..mesh.n_elements())
        .map(|e| {
            let grad = element_gradient(mesh, &nodal, e);
            mesh.element_area(e) * (grad[0] * grad[0] + grad[1] * grad[1])
        })
        .sum()
}

/// ‖∇(u_h − P u_H)‖_{L²(Ω)} where P prolongs u_H onto u_h's mesh.
pub fn energy_norm_diff(
    fine: &Mesh2D,
    u_h: &DiscreteFunction,
    u_coarse: &DiscreteFunction,
    map: &RefinementMap,
) -> Result<f64> {
    if u_h.space.mesh != fine.id {
        return Err(Error::precondition(
            "fine function does not live on the fine mesh".to_string(),
        ));
    }
    let carried = prolong(u_coarse, map, fine)?;
    let diff = DiscreteFunction {
        space: u_h.space.clone(),
        coefficients: u_h
            .coefficients
            .iter()
            .zip(&carried.coefficients)
            .map(|(a, b)| a - b)
            .collect(),
    };
    Ok(energy_norm_sq(fine, &diff).sqrt())
}

/// Residual error indicators for −Δu = f.
pub fn estimate_residual(mesh: &Mesh2D, f: &Load, u: &DiscreteFunction) -> Result<IndicatorField> {
    if u.space.mesh != mesh.id {
        return Err(Error::precondition(
            "function does not live on this mesh".to_string(),
        ));
    }
    let nodal = u.nodal_values();
    let grads: Vec<[f64; 2]> = (0..mesh.n_elements())
        .map(|e| element_gradient(mesh, &nodal, e))
        .collect();

    let mut eta_sq = vec![0.0; mesh.n_elements()];
    for e in 0..mesh.n_elements() {
        let p = mesh.element_points(e);
        let area = mesh.element_area(e);
        eta_sq[e] = area * f.integral_sq(p, area);
    }

    let (edges, elems) = mesh.edge_incidence();
    for (&(a, b), adj) in edges.iter().zip(&elems) {
        if adj.len() != 2 {
            continue;
        }
        let (t1, t2) = (adj[0], adj[1]);
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let len = pa.dist(pb);
        let normal = [(pb.y - pa.y) / len, (pa.x - pb.x) / len];
        let dg = [grads[t1][0] - grads[t2][0], grads[t1][1] - grads[t2][1]];
        let jump = dg[0] * normal[0] + dg[1] * normal[1];
        let contribution = jump * jump * len;
        for &t in adj {
            eta_sq[t] += mesh.element_area(t).sqrt() * contribution;
        }
    }

    let values = eta_sq.iter().map(|s| s.sqrt()).collect();
    IndicatorField::new(mesh.id, values)
}

/// ‖∇u_exact − ∇u_h‖_{L²(Ω)} against a supplied exact gradient.
pub fn error_vs_manufactured(
    mesh: &Mesh2D,
    u: &DiscreteFunction,
    exact_grad: &dyn Fn(f64, f64) -> (f64, f64),
) -> f64 {
    let nodal = u.nodal_values();
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let p = mesh.element_points(e);
        let area = mesh.element_area(e);
        let grad = element_gradient(mesh, &nodal, e);
        total += integrate_triangle(p[0], p[1], p[2], area, &|x, y| {
            let (gx, gy) = exact_grad(x, y);
            let dx = gx - grad[0];
            let dy = gy - grad[1];
            dx * dx + dy * dy
        });
    }
    total.sqrt()
}

/// Interpolates a scalar field at the mesh vertices, zeroing the boundary.
pub fn interpolate(mesh: &Mesh2D, f: &dyn Fn(f64, f64) -> f64) -> DiscreteFunction {
    let space = P1Space::new(mesh);
    let mut coefficients = vec![0.0; space.n_dofs];
    for (v, d) in space.dof_of_vertex.iter().enumerate() {
        if let Some(i) = d {
            let p = mesh.vertices[v];
            coefficients[*i] = f(p.x, p.y);
        }
    }
    DiscreteFunction { space, coefficients }
}

/// Vertex ids constrained by the space (on the Dirichlet boundary).
pub fn boundary_vertices(mesh: &Mesh2D) -> BTreeSet<usize> {
    mesh.boundary_edges
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect()
}
