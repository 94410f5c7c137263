//! Partitions of a closed polygonal curve into straight segments.
//!
//! These meshes feed the boundary element solver. Segments are kept in
//! cyclic order, bisection splits a segment at its arclength midpoint, and a
//! closure pass keeps the generations of adjacent segments within 1 of each
//! other, which bounds the neighbor length ratio by 2 for equal initial
//! segments. The curve must have diameter below 1: the logarithmic kernel of
//! the single-layer operator is only positive definite in that regime.

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::refinement::{fresh_mesh_id, MeshId, MidpointVertex, RefinementMap};
use std::collections::{BTreeMap, HashMap, VecDeque};

/// One straight piece of the curve, directed along the traversal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub v: [usize; 2],
    pub generation: u32,
    pub parent: Option<usize>,
}

/// A closed polygonal curve split into segments, stored in cyclic order:
/// segment `i` ends where segment `i + 1` (wrapping) begins.
#[derive(Clone, Debug)]
pub struct BoundaryMesh {
    pub id: MeshId,
    pub vertices: Vec<Point>,
    pub segments: Vec<Segment>,
}

impl BoundaryMesh {
    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn segment_points(&self, i: usize) -> [Point; 2] {
        let s = &self.segments[i];
        [self.vertices[s.v[0]], self.vertices[s.v[1]]]
    }

    pub fn segment_length(&self, i: usize) -> f64 {
        let [a, b] = self.segment_points(i);
        a.dist(b)
    }

    pub fn total_length(&self) -> f64 {
        (0..self.n_segments()).map(|i| self.segment_length(i)).sum()
    }

    /// Unit tangent along the traversal direction of segment `i`.
    pub fn tangent(&self, i: usize) -> Point {
        let [a, b] = self.segment_points(i);
        b.sub(a).scale(1.0 / a.dist(b))
    }

    /// Largest length ratio between adjacent segments.
    pub fn neighbor_ratio(&self) -> f64 {
        let n = self.n_segments();
        (0..n)
            .map(|i| {
                let a = self.segment_length(i);
                let b = self.segment_length((i + 1) % n);
                (a / b).max(b / a)
            })
            .fold(1.0, f64::max)
    }

    /// Largest distance between two curve points (attained at vertices).
    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.vertices.len() {
            for j in i + 1..self.vertices.len() {
                d = d.max(self.vertices[i].dist(self.vertices[j]));
            }
        }
        d
    }

    /// Checks the cyclic structure: segments chain end-to-start around the
    /// curve, every segment has positive length, adjacent generations differ
    /// by at most 1, and the diameter stays below 1.
    pub fn audit_chain(&self) -> Result<()> {
        let n = self.n_segments();
        if n < 3 {
            return Err(Error::precondition(format!(
                "closed curve needs at least 3 segments, found {n}"
            )));
        }
        for (i, s) in self.segments.iter().enumerate() {
            for &v in &s.v {
                if v >= self.n_vertices() {
                    return Err(Error::precondition(format!(
                        "segment {i} references vertex {v} out of range"
                    )));
                }
            }
            if self.segment_length(i) <= 0.0 {
                return Err(Error::precondition(format!("segment {i} has zero length")));
            }
            let next = &self.segments[(i + 1) % n];
            if s.v[1] != next.v[0] {
                return Err(Error::precondition(format!(
                    "segments {i} and {} do not chain: {} vs {}",
                    (i + 1) % n,
                    s.v[1],
                    next.v[0]
                )));
            }
            let gap = s.generation.abs_diff(next.generation);
            if gap > 1 {
                return Err(Error::precondition(format!(
                    "adjacent segments {i} and {} differ by {gap} generations",
                    (i + 1) % n
                )));
            }
        }
        let diam = self.diameter();
        if diam >= 1.0 {
            return Err(Error::precondition(format!(
                "domain diameter {diam} is not below 1; the single-layer \
                 operator loses positive definiteness"
            )));
        }
        Ok(())
    }

    /// Partitions a closed polygon (corners in traversal order, closing edge
    /// implied) into `n0` equal segments per polygon edge.
    pub fn make(corners: &[Point], n0: usize) -> Result<BoundaryMesh> {
        if corners.len() < 3 {
            return Err(Error::precondition(format!(
                "polygon needs at least 3 corners, got {}",
                corners.len()
            )));
        }
        if n0 < 1 {
            return Err(Error::precondition("segments per edge must be at least 1"));
        }
        let mut vertices = Vec::with_capacity(corners.len() * n0);
        for (k, &a) in corners.iter().enumerate() {
            let b = corners[(k + 1) % corners.len()];
            for j in 0..n0 {
                let t = j as f64 / n0 as f64;
                vertices.push(Point::new(
                    a.x + t * (b.x - a.x),
                    a.y + t * (b.y - a.y),
                ));
            }
        }
        let n = vertices.len();
        let segments = (0..n)
            .map(|i| Segment { v: [i, (i + 1) % n], generation: 0, parent: None })
            .collect();
        let mesh = BoundaryMesh { id: fresh_mesh_id(), vertices, segments };
        mesh.audit_chain()?;
        Ok(mesh)
    }

    /// Axis-aligned square with one corner at the origin.
    pub fn square(side: f64, n0: usize) -> Result<BoundaryMesh> {
        BoundaryMesh::make(
            &[
                Point::new(0.0, 0.0),
                Point::new(side, 0.0),
                Point::new(side, side),
                Point::new(0.0, side),
            ],
            n0,
        )
    }

    /// Regular n-gon inscribed in the circle of the given radius, centered
    /// at the origin.
    pub fn regular_polygon(n: usize, radius: f64) -> Result<BoundaryMesh> {
        let corners: Vec<Point> = (0..n)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Point::new(radius * phi.cos(), radius * phi.sin())
            })
            .collect();
        BoundaryMesh::make(&corners, 1)
    }

    /// Bisects the marked segments at their midpoints. The closure also
    /// bisects any segment whose generation would fall 2 or more behind a
    /// neighbor, so adjacent generations always differ by at most 1.
    pub fn refine(&self, marked: &[usize]) -> Result<(BoundaryMesh, RefinementMap)> {
        let n = self.n_segments();
        for &m in marked {
            if m >= n {
                return Err(Error::precondition(format!(
                    "marked segment {m} out of range ({n} segments)"
                )));
            }
        }

        let mut split = vec![false; n];
        let mut queue = VecDeque::new();
        for &m in marked {
            if !split[m] {
                split[m] = true;
                queue.push_back(m);
            }
        }
        let eff = |i: usize, split: &[bool]| self.segments[i].generation + u32::from(split[i]);
        while let Some(i) = queue.pop_front() {
            for j in [(i + n - 1) % n, (i + 1) % n] {
                if !split[j] && eff(i, &split) > eff(j, &split) + 1 {
                    split[j] = true;
                    queue.push_back(j);
                }
            }
        }

        let mut vertices = self.vertices.clone();
        let mut new_vertices = Vec::new();
        let mut segments = Vec::new();
        let mut kept = Vec::new();
        let mut parent_to_children = BTreeMap::new();
        for (i, s) in self.segments.iter().enumerate() {
            if !split[i] {
                kept.push((i, segments.len()));
                segments.push(Segment { v: s.v, generation: s.generation, parent: Some(i) });
                continue;
            }
            let [a, b] = s.v;
            let m = vertices.len();
            vertices.push(self.vertices[a].midpoint(self.vertices[b]));
            new_vertices.push(MidpointVertex { index: m, endpoints: (a, b) });
            parent_to_children.insert(i, vec![segments.len(), segments.len() + 1]);
            let g = s.generation + 1;
            segments.push(Segment { v: [a, m], generation: g, parent: Some(i) });
            segments.push(Segment { v: [m, b], generation: g, parent: Some(i) });
        }

        let fine = BoundaryMesh { id: fresh_mesh_id(), vertices, segments };
        let map = RefinementMap {
            coarse: self.id,
            fine: fine.id,
            kept,
            parent_to_children,
            new_vertices,
            n_coarse_elements: n,
            n_fine_elements: fine.n_segments(),
            n_coarse_vertices: self.n_vertices(),
            n_fine_vertices: fine.n_vertices(),
        };
        Ok((fine, map))
    }

    /// Bisects every segment.
    pub fn refine_all(&self) -> Result<(BoundaryMesh, RefinementMap)> {
        let all: Vec<usize> = (0..self.n_segments()).collect();
        self.refine(&all)
    }

    /// Serializes to the plain text format: a `bmesh v1` header, one
    /// `v <x> <y>` line per vertex, then one `s <i0> <i1> <gen>` line per
    /// segment in cyclic order.
    pub fn to_text(&self) -> String {
        let mut out = String::from("bmesh v1\n");
        for p in &self.vertices {
            out.push_str(&format!("v {} {}\n", p.x, p.y));
        }
        for s in &self.segments {
            out.push_str(&format!("s {} {} {}\n", s.v[0], s.v[1], s.generation));
        }
        out
    }

    /// Parses the text format produced by [`BoundaryMesh::to_text`].
    pub fn read_text(text: &str) -> Result<BoundaryMesh> {
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => {}
                other => break other,
            }
        };
        match header {
            Some((_, l)) if l.trim() == "bmesh v1" => {}
            Some((n, l)) => {
                return Err(Error::input(n + 1, format!("expected 'bmesh v1' header, found '{l}'")))
            }
            None => return Err(Error::input(1, "empty mesh file")),
        }

        let mut vertices: Vec<Point> = Vec::new();
        let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
        let mut segments: Vec<Segment> = Vec::new();
        for (n, raw) in lines {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    if !segments.is_empty() {
                        return Err(Error::input(line_no, "vertex line after segment lines"));
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
                Some("s") => {
                    let mut idx = [0usize; 2];
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
                        return Err(Error::input(line_no, "trailing fields on segment line"));
                    }
                    segments.push(Segment { v: idx, generation, parent: None });
                }
                Some(other) => {
                    return Err(Error::input(line_no, format!("unknown record '{other}'")))
                }
                None => {}
            }
        }
        let mesh = BoundaryMesh { id: fresh_mesh_id(), vertices, segments };
        mesh.audit_chain()?;
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
