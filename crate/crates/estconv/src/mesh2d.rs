//! Conforming triangulations under newest-vertex bisection.
//!
//! Each triangle stores its vertices so that the refinement edge lies
//! opposite vertex 0. Bisection inserts the midpoint of that edge, hands the
//! two children their refinement edges by the usual newest-vertex rule, and a
//! closure pass keeps the mesh free of hanging nodes. Meshes are immutable;
//! refinement returns a fresh mesh plus the [`RefinementMap`] tying the two
//! together.

use crate::error::{Error, Result};
use crate::geometry::{signed_area_x2, Point};
use crate::refinement::{fresh_mesh_id, MeshId, MidpointVertex, RefinementMap};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

/// One triangle: vertex ids (refinement edge opposite `v[0]`), bisection
/// generation, and the element id it came from in the previous mesh.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triangle {
    pub v: [usize; 3],
    pub generation: u32,
    pub parent: Option<usize>,
}

/// A conforming triangle mesh.
#[derive(Clone, Debug)]
pub struct Mesh2D {
    pub id: MeshId,
    pub vertices: Vec<Point>,
    pub elements: Vec<Triangle>,
    pub boundary_edges: BTreeSet<(usize, usize)>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh2D {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn element_points(&self, i: usize) -> [Point; 3] {
        let t = &self.elements[i];
        [self.vertices[t.v[0]], self.vertices[t.v[1]], self.vertices[t.v[2]]]
    }

    pub fn element_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.element_points(i);
        0.5 * signed_area_x2(a, b, c)
    }

    /// Longest side of element `i`, which is its diameter.
    pub fn element_diam(&self, i: usize) -> f64 {
        let [a, b, c] = self.element_points(i);
        a.dist(b).max(b.dist(c)).max(c.dist(a))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|i| self.element_area(i)).sum()
    }

    /// The three undirected edges of element `i`; entry `k` is opposite vertex `v[k]`,
    /// so entry 0 is the refinement edge.
    pub fn element_edges(&self, i: usize) -> [(usize, usize); 3] {
        let [a, b, c] = self.elements[i].v;
        [edge_key(b, c), edge_key(c, a), edge_key(a, b)]
    }

    pub fn refinement_edge(&self, i: usize) -> (usize, usize) {
        let t = &self.elements[i];
        edge_key(t.v[1], t.v[2])
    }

    /// Shape regularity: max over elements of diam(T) / area(T)^(1/2).
    pub fn shape_regularity(&self) -> f64 {
        (0..self.n_elements())
            .map(|i| self.element_diam(i) / self.element_area(i).sqrt())
            .fold(0.0, f64::max)
    }

    /// Edge incidence in first-seen order: deterministic edge list plus the
    /// elements adjacent to each edge.
    pub fn edge_incidence(&self) -> (Vec<(usize, usize)>, Vec<Vec<usize>>) {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut elems: Vec<Vec<usize>> = Vec::new();
        for i in 0..self.n_elements() {
            for e in self.element_edges(i) {
                let slot = *index.entry(e).or_insert_with(|| {
                    edges.push(e);
                    elems.push(Vec::new());
                    edges.len() - 1
                });
                elems[slot].push(i);
            }
        }
        (edges, elems)
    }

    /// Checks that the mesh is a conforming triangulation: positive areas,
    /// interior edges shared by exactly two elements, boundary edges by one,
    /// and the stored boundary set matching the incidence counts.
    pub fn audit_conformity(&self) -> Result<()> {
        for (i, t) in self.elements.iter().enumerate() {
            for &v in &t.v {
                if v >= self.n_vertices() {
                    return Err(Error::precondition(format!(
                        "element {i} references vertex {v} out of range"
                    )));
                }
            }
            if self.element_area(i) <= 0.0 {
                return Err(Error::precondition(format!(
                    "element {i} has non-positive area"
                )));
            }
        }
        let (edges, elems) = self.edge_incidence();
        let mut boundary_seen = BTreeSet::new();
        for (e, adj) in edges.iter().zip(&elems) {
            match adj.len() {
                1 => {
                    boundary_seen.insert(*e);
                }
                2 => {}
                n => {
                    return Err(Error::precondition(format!(
                        "edge {e:?} is shared by {n} elements"
                    )))
                }
            }
        }
        if boundary_seen != self.boundary_edges {
            return Err(Error::precondition(
                "stored boundary edges disagree with edge incidence".to_string(),
            ));
        }
        Ok(())
    }

    fn assemble(vertices: Vec<Point>, elements: Vec<Triangle>) -> Mesh2D {
        let mut mesh = Mesh2D {
            id: fresh_mesh_id(),
            vertices,
            elements,
            boundary_edges: BTreeSet::new(),
        };
        let (edges, elems) = mesh.edge_incidence();
        mesh.boundary_edges = edges
            .into_iter()
            .zip(&elems)
            .filter(|(_, adj)| adj.len() == 1)
            .map(|(e, _)| e)
            .collect();
        mesh
    }

    /// Re-tags every element so its refinement edge is the longest one, with
    /// ties broken toward the smallest opposite-vertex id. Applied to initial
    /// meshes only; refined meshes inherit their tags from the bisection rule.
    fn retag_longest_edge(&mut self) {
        for i in 0..self.elements.len() {
            let v = self.elements[i].v;
            let p = [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]];
            let mut best = 0usize;
            let mut best_len = -1.0;
            for k in 0..3 {
                let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
                let len = a.sub(b).dot(a.sub(b));
                if len > best_len || (len == best_len && v[k] < v[best]) {
                    best = k;
                    best_len = len;
                }
            }
            self.elements[i].v = [v[best], v[(best + 1) % 3], v[(best + 2) % 3]];
        }
    }

    /// Unit square split into two triangles along the (0,0)-(1,1) diagonal.
    pub fn unit_square() -> Mesh2D {
        let vertices = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        let triples = [[1, 2, 0], [3, 0, 2]];
        let elements = triples
            .iter()
            .map(|&v| Triangle { v, generation: 0, parent: None })
            .collect();
        let mut mesh = Mesh2D::assemble(vertices, elements);
        mesh.retag_longest_edge();
        mesh
    }

    /// L-shaped domain (-1,1)^2 minus the closed first-quadrant square,
    /// built from three unit squares of two triangles each.
    pub fn l_shape() -> Mesh2D {
        let vertices = vec![
            Point::new(-1.0, -1.0),
            Point::new(0.0, -1.0),
            Point::new(1.0, -1.0),
            Point::new(-1.0, 0.0),
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(-1.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        let triples = [
            [1, 4, 0],
            [3, 0, 4],
            [2, 5, 1],
            [4, 1, 5],
            [4, 7, 3],
            [6, 3, 7],
        ];
        let elements = triples
            .iter()
            .map(|&v| Triangle { v, generation: 0, parent: None })
            .collect();
        let mut mesh = Mesh2D::assemble(vertices, elements);
        mesh.retag_longest_edge();
        mesh
    }

    /// Newest-vertex bisection of the marked elements, followed by the
    /// conforming closure.
    ///
    /// Closure works on edges: every marked element marks its refinement
    /// edge, and any element with a marked edge must mark its own refinement
    /// edge too, until this stabilizes. Each element is then split according
    /// to which of its edges are marked (one, two, or three bisections), so
    /// exactly the marked edges gain midpoints and the result is conforming.
    pub fn refine_nvb(&self, marked: &[usize]) -> Result<(Mesh2D, RefinementMap)> {
        for &m in marked {
            if m >= self.n_elements() {
                return Err(Error::precondition(format!(
                    "marked element {m} out of range ({} elements)",
                    self.n_elements()
                )));
            }
        }

        let (edges, edge_elems) = self.edge_incidence();
        let edge_index: HashMap<(usize, usize), usize> =
            edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();

        let mut edge_marked = vec![false; edges.len()];
        let mut queue = VecDeque::new();
        for &m in marked {
            let slot = edge_index[&self.refinement_edge(m)];
            if !edge_marked[slot] {
                edge_marked[slot] = true;
                queue.push_back(slot);
            }
        }
        while let Some(slot) = queue.pop_front() {
            for &t in &edge_elems[slot] {
                let rslot = edge_index[&self.refinement_edge(t)];
                if !edge_marked[rslot] {
                    edge_marked[rslot] = true;
                    queue.push_back(rslot);
                }
            }
        }

        // Midpoints for marked edges, in sorted edge order.
        let mut vertices = self.vertices.clone();
        let mut new_vertices = Vec::new();
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut to_split: Vec<(usize, usize)> = edges
            .iter()
            .zip(&edge_marked)
            .filter(|(_, &m)| m)
            .map(|(&e, _)| e)
            .collect();
        to_split.sort_unstable();
        for (a, b) in to_split {
            let idx = vertices.len();
            vertices.push(self.vertices[a].midpoint(self.vertices[b]));
            new_vertices.push(MidpointVertex { index: idx, endpoints: (a, b) });
            midpoint.insert((a, b), idx);
        }

        let mut elements: Vec<Triangle> = Vec::new();
        let mut kept = Vec::new();
        let mut parent_to_children = BTreeMap::new();
        for (i, t) in self.elements.iter().enumerate() {
            let [a, b, c] = t.v;
            let g = t.generation;
            let m0 = midpoint.get(&edge_key(b, c)).copied();
            let m1 = midpoint.get(&edge_key(c, a)).copied();
            let m2 = midpoint.get(&edge_key(a, b)).copied();
            let Some(m0) = m0 else {
                debug_assert!(m1.is_none() && m2.is_none());
                kept.push((i, elements.len()));
                elements.push(Triangle { v: [a, b, c], generation: g, parent: Some(i) });
                continue;
            };
            let mut children = Vec::new();
            let mut push = |v: [usize; 3], generation: u32, out: &mut Vec<Triangle>| {
                children.push(out.len());
                out.push(Triangle { v, generation, parent: Some(i) });
            };
            // First child (m0, a, b) owns old edge (a, b); second child
            // (m0, c, a) owns old edge (c, a). Each is bisected again when
            // its refinement edge carries a midpoint.
            match m2 {
                Some(m2) => {
                    push([m2, m0, a], g + 2, &mut elements);
                    push([m2, b, m0], g + 2, &mut elements);
                }
                None => push([m0, a, b], g + 1, &mut elements),
            }
            match m1 {
                Some(m1) => {
                    push([m1, m0, c], g + 2, &mut elements);
                    push([m1, a, m0], g + 2, &mut elements);
                }
                None => push([m0, c, a], g + 1, &mut elements),
            }
            parent_to_children.insert(i, children);
        }

        let map = RefinementMap {
            coarse: self.id,
            fine: MeshId(0),
            kept,
            parent_to_children,
            new_vertices,
            n_coarse_elements: self.n_elements(),
            n_fine_elements: elements.len(),
            n_coarse_vertices: self.n_vertices(),
            n_fine_vertices: vertices.len(),
        };
        let fine = Mesh2D::assemble(vertices, elements);
        let map = RefinementMap { fine: fine.id, ..map };
        Ok((fine, map))
    }

    /// Bisects every element at least once.
    pub fn refine_all(&self) -> Result<(Mesh2D, RefinementMap)> {
        let all: Vec<usize> = (0..self.n_elements()).collect();
        self.refine_nvb(&all)
    }

    /// Serializes to the plain text format:
    /// a `mesh2d v1` header, one `v <x> <y>` line per vertex, then one
    /// `t <i0> <i1> <i2> <gen>` line per element.
    pub fn to_text(&self) -> String {
        let mut out = String::from("mesh2d v1\n");
        for p in &self.vertices {
            out.push_str(&format!("v {} {}\n", p.x, p.y));
        }
        for t in &self.elements {
            out.push_str(&format!("t {} {} {} {}\n", t.v[0], t.v[1], t.v[2], t.generation));
        }
        out
    }

    /// Parses the text format produced by [`Mesh2D::to_text`]. Vertex
    /// ordering, element ordering, and refinement-edge tags survive the
    /// round trip exactly.
    pub fn read_text(text: &str) -> Result<Mesh2D> {
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((n, l)) if l.trim().is_empty() => {
                    let _ = n;
                }
                other => break other,
            }
        };
        match header {
            Some((_, l)) if l.trim() == "mesh2d v1" => {}
            Some((n, l)) => {
                return Err(Error::input(n + 1, format!("expected 'mesh2d v1' header, found '{l}'")))
            }
            None => return Err(Error::input(1, "empty mesh file")),
        }

        let mut vertices: Vec<Point> = Vec::new();
        let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
        let mut elements: Vec<Triangle> = Vec::new();
        for (n, raw) in lines {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    if !elements.is_empty() {
                        return Err(Error::input(line_no, "vertex line after triangle lines"));
                    }
                    let x = parse_f64(parts.next(), line_no)?;
                    let y = parse_f64(parts.next(), line_no)?;
                    if parts.next().is_some() {
                        return Err(Error::input(line_no, "trailing fields on vertex line"));
                    }
                    if let Some(first) = seen.insert((x.to_bits(), y.to_bits()), vertices.len()) {
                        return Err(Error::input(
                            line_no,
                            format!("repeated vertex ({x}, {y}), first seen as vertex {first}"),
                        ));
                    }
                    vertices.push(Point::new(x, y));
                }
                Some("t") => {
                    let mut idx = [0usize; 3];
                    for slot in &mut idx {
                        *slot = parse_usize(parts.next(), line_no)?;
                        if *slot >= vertices.len() {
                            return Err(Error::input(
                                line_no,
                                format!("vertex index {} out of range ({} vertices)", slot, vertices.len()),
                            ));
                        }
                    }
                    let generation = parse_usize(parts.next(), line_no)? as u32;
                    if parts.next().is_some() {
                        return Err(Error::input(line_no, "trailing fields on triangle line"));
                    }
                    if signed_area_x2(vertices[idx[0]], vertices[idx[1]], vertices[idx[2]]) <= 0.0 {
                        return Err(Error::input(line_no, "triangle is degenerate or clockwise"));
                    }
                    elements.push(Triangle { v: idx, generation, parent: None });
                }
                Some(other) => {
                    return Err(Error::input(line_no, format!("unknown record '{other}'")))
                }
                None => {}
            }
        }
        if elements.is_empty() {
            return Err(Error::input(0, "mesh has no triangles"));
        }
        let mesh = Mesh2D::assemble(vertices, elements);
        mesh.audit_conformity()?;
        Ok(mesh)
    }

    /// Reads a user triangulation as an initial mesh: every triangle must be
    /// generation 0, and refinement edges are assigned to the longest edge.
    pub fn initial_from_text(text: &str) -> Result<Mesh2D> {
        let mut mesh = Mesh2D::read_text(text)?;
        if let Some(t) = mesh.elements.iter().find(|t| t.generation != 0) {
            return Err(Error::precondition(format!(
                "initial mesh must be generation 0 everywhere, found generation {}",
                t.generation
            )));
        }
        mesh.retag_longest_edge();
        Ok(mesh)
    }
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::input(line, "missing numeric field"))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::input(line, format!("bad number '{tok}'")))?;
    if !v.is_finite() {
        return Err(Error::input(line, format!("non-finite number '{tok}'")));
    }
    Ok(v)
}

fn parse_usize(tok: Option<&str>, line: usize) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::input(line, "missing integer field"))?;
    tok.parse()
        .map_err(|_| Error::input(line, format!("bad integer '{tok}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_unit_square_layout() {
        let m = Mesh2D::unit_square();
        assert_eq!(m.n_elements(), 2);
        assert_eq!(m.n_vertices(), 4);
        for i in 0..2 {
            assert!((m.element_area(i) - 0.5).abs() < 1e-15);
            // Refinement edge is the diagonal between vertices 0 and 2.
            assert_eq!(m.refinement_edge(i), (0, 2));
        }
        m.audit_conformity().unwrap();
        assert!((m.shape_regularity() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn test_l_shape_layout() {
        let m = Mesh2D::l_shape();
        assert_eq!(m.n_elements(), 6);
        assert_eq!(m.n_vertices(), 8);
        assert!((m.total_area() - 3.0).abs() < 1e-14);
        m.audit_conformity().unwrap();
        assert!((m.shape_regularity() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn test_equilateral_shape_regularity() {
        let vertices = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.5, 0.75_f64.sqrt()),
        ];
        let elements = vec![Triangle { v: [0, 1, 2], generation: 0, parent: None }];
        let m = Mesh2D::assemble(vertices, elements);
        let expected = (4.0 / 3.0_f64.sqrt()).sqrt();
        assert!((m.shape_regularity() - expected).abs() < 1e-12);
        assert!((expected - 1.5197).abs() < 1e-4);
    }

    #[test]
    fn test_mark_one_of_two_refines_both() {
        let m = Mesh2D::unit_square();
        let (fine, map) = m.refine_nvb(&[0]).unwrap();
        assert_eq!(fine.n_elements(), 4);
        assert_eq!(fine.n_vertices(), 5);
        for i in 0..4 {
            assert!((fine.element_area(i) - 0.25).abs() < 1e-15);
            assert_eq!(fine.elements[i].generation, 1);
        }
        assert!(map.kept.is_empty());
        assert_eq!(map.parent_to_children.len(), 2);
        fine.audit_conformity().unwrap();
    }

    #[test]
    fn test_children_tile_parent_and_halve_area() {
        let m = Mesh2D::l_shape();
        let (fine, map) = m.refine_nvb(&[0, 3]).unwrap();
        fine.audit_conformity().unwrap();
        for (&p, children) in &map.parent_to_children {
            let parent_area = m.element_area(p);
            let sum: f64 = children.iter().map(|&c| fine.element_area(c)).sum();
            assert!((sum - parent_area).abs() < 1e-14);
            for &c in children {
                assert!(fine.element_area(c) <= 0.5 * parent_area + 1e-14);
                assert!(fine.elements[c].generation > m.elements[p].generation);
                assert_eq!(fine.elements[c].parent, Some(p));
            }
        }
        for &(c, f) in &map.kept {
            assert_eq!(m.elements[c].v, fine.elements[f].v);
            assert_eq!(fine.elements[f].parent, Some(c));
        }
        assert!((fine.total_area() - 3.0).abs() < 1e-13);
    }

    #[test]
    fn test_generation_steps_by_one_per_bisection() {
        // Refining a single element of the criss-cross square forces the
        // closure to cascade; generations must still step by single units.
        let (m, _) = Mesh2D::unit_square().refine_all().unwrap();
        let (fine, map) = m.refine_nvb(&[0]).unwrap();
        fine.audit_conformity().unwrap();
        for (&p, children) in &map.parent_to_children {
            for &c in children {
                let dg = fine.elements[c].generation - m.elements[p].generation;
                assert!(dg == 1 || dg == 2, "generation jumped by {dg}");
            }
        }
    }

    #[test]
    fn test_repeated_local_refinement_stays_conforming() {
        let mut mesh = Mesh2D::l_shape();
        let mut total = mesh.total_area();
        let gamma0 = mesh.shape_regularity();
        for step in 0..12 {
            let pick = step % mesh.n_elements();
            let (fine, map) = mesh.refine_nvb(&[pick]).unwrap();
            fine.audit_conformity().unwrap();
            assert!((fine.total_area() - total).abs() < 1e-12);
            assert!(fine.shape_regularity() <= 2.0 * gamma0 + 1e-12);
            assert!(map.parent_to_children.contains_key(&pick));
            total = fine.total_area();
            mesh = fine;
        }
        assert!(mesh.n_elements() > 30);
    }

    #[test]
    fn test_refine_out_of_range_is_error() {
        let m = Mesh2D::unit_square();
        assert!(matches!(m.refine_nvb(&[7]), Err(Error::Precondition(_))));
    }

    #[test]
    fn test_empty_marking_keeps_everything() {
        let m = Mesh2D::l_shape();
        let (fine, map) = m.refine_nvb(&[]).unwrap();
        assert_eq!(fine.n_elements(), m.n_elements());
        assert_eq!(map.kept.len(), m.n_elements());
        assert!(map.parent_to_children.is_empty());
    }

    #[test]
    fn test_uniform_refinement_doubles_elements() {
        let m = Mesh2D::unit_square();
        let (m1, _) = m.refine_all().unwrap();
        assert_eq!(m1.n_elements(), 4);
        let (m2, _) = m1.refine_all().unwrap();
        assert_eq!(m2.n_elements(), 8);
        let (m3, _) = m2.refine_all().unwrap();
        assert_eq!(m3.n_elements(), 16);
        m3.audit_conformity().unwrap();
        // Right isosceles triangles reproduce themselves under bisection.
        assert!((m3.shape_regularity() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn test_text_round_trip_is_byte_identical() {
        let (m, _) = Mesh2D::l_shape().refine_nvb(&[1, 4]).unwrap();
        let text = m.to_text();
        let back = Mesh2D::read_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.n_elements(), m.n_elements());
        for i in 0..m.n_elements() {
            assert_eq!(back.elements[i].v, m.elements[i].v);
            assert_eq!(back.elements[i].generation, m.elements[i].generation);
        }
        assert_eq!(back.boundary_edges, m.boundary_edges);
    }

    #[test]
    fn test_read_rejects_repeated_vertex_with_line() {
        let text = "mesh2d v1\nv 0 0\nv 1 0\nv 0 0\nt 0 1 2 0\n";
        match Mesh2D::read_text(text) {
            Err(Error::Input { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("repeated vertex"));
            }
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn test_read_rejects_bad_header_and_index() {
        assert!(Mesh2D::read_text("nope\n").is_err());
        let text = "mesh2d v1\nv 0 0\nv 1 0\nv 0 1\nt 0 1 9 0\n";
        match Mesh2D::read_text(text) {
            Err(Error::Input { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn test_initial_from_text_retags_longest_edge() {
        // A 3-4-5 style triangle stored with the wrong leading vertex.
        let text = "mesh2d v1\nv 0 0\nv 4 0\nv 0 3\nt 2 0 1 0\n";
        let m = Mesh2D::initial_from_text(text).unwrap();
        // Longest edge is the hypotenuse between vertices 1 and 2.
        assert_eq!(m.refinement_edge(0), (1, 2));
        assert_eq!(m.elements[0].v[0], 0);
    }

    #[test]
    fn test_initial_from_text_rejects_nonzero_generation() {
        let text = "mesh2d v1\nv 0 0\nv 1 0\nv 0 1\nt 0 1 2 3\n";
        assert!(matches!(
            Mesh2D::initial_from_text(text),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn test_longest_edge_tie_prefers_smallest_opposite_vertex() {
        // Isosceles triangle with integer coordinates: the edges opposite
        // vertices 0 and 1 both have squared length 5, and vertex 1 is
        // encountered first in the stored ordering. The tie must resolve
        // toward the smaller id, vertex 0.
        let text = "mesh2d v1\nv 0 0\nv 2 0\nv 1 2\nt 1 2 0 0\n";
        let m = Mesh2D::initial_from_text(text).unwrap();
        assert_eq!(m.elements[0].v, [0, 1, 2]);
        assert_eq!(m.refinement_edge(0), (1, 2));
    }
}
