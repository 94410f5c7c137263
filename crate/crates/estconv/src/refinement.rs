//! Refinement maps: the bookkeeping that ties a refined mesh back to its
//! parent. Audits, prolongation, and multi-level comparisons all run off
//! this record instead of re-deriving element ancestry from geometry.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

/// Identity of one mesh instance. Monotone per process, so maps cannot be
/// applied to a mesh they were not built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MeshId(pub u64);

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

pub fn fresh_mesh_id() -> MeshId {
    MeshId(NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed))
}

/// A vertex created during refinement, as the midpoint of two existing ones.
/// Stored in creation order so nodal data can be carried forward level by level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MidpointVertex {
    pub index: usize,
    pub endpoints: (usize, usize),
}

/// How a coarse mesh relates to one of its refinements.
///
/// `kept` pairs elements that carried over unchanged (coarse id, fine id);
/// `parent_to_children` sends every refined coarse element to the fine
/// elements that tile it exactly.
#[derive(Clone, Debug)]
pub struct RefinementMap {
    pub coarse: MeshId,
    pub fine: MeshId,
    pub kept: Vec<(usize, usize)>,
    pub parent_to_children: BTreeMap<usize, Vec<usize>>,
    pub new_vertices: Vec<MidpointVertex>,
    pub n_coarse_elements: usize,
    pub n_fine_elements: usize,
    pub n_coarse_vertices: usize,
    pub n_fine_vertices: usize,
}

/// Element classification induced by a map: elements common to both meshes,
/// coarse elements that were split, and fine elements that are new.
#[derive(Clone, Debug)]
pub struct OverlapClasses {
    pub kept_coarse: Vec<usize>,
    pub kept_fine: Vec<usize>,
    pub refined_coarse: Vec<usize>,
    pub new_fine: Vec<usize>,
}

impl RefinementMap {
    /// Splits both meshes into kept / refined / new element id lists.
    pub fn classify(&self) -> OverlapClasses {
        let mut kept_coarse: Vec<usize> = self.kept.iter().map(|&(c, _)| c).collect();
        let mut kept_fine: Vec<usize> = self.kept.iter().map(|&(_, f)| f).collect();
        kept_coarse.sort_unstable();
        kept_fine.sort_unstable();
        let refined_coarse: Vec<usize> = self.parent_to_children.keys().copied().collect();
        let mut new_fine: Vec<usize> = self
            .parent_to_children
            .values()
            .flat_map(|c| c.iter().copied())
            .collect();
        new_fine.sort_unstable();
        OverlapClasses {
            kept_coarse,
            kept_fine,
            refined_coarse,
            new_fine,
        }
    }

    /// Chains this map with a refinement of its fine mesh, producing the map
    /// from the original coarse mesh to the final one. Element classification
    /// through the composed map matches walking the steps one by one.
    pub fn compose(&self, next: &RefinementMap) -> Result<RefinementMap> {
        if self.fine != next.coarse {
            return Err(Error::precondition(format!(
                "map composition mismatch: first map refines into mesh {:?}, second starts from {:?}",
                self.fine, next.coarse
            )));
        }
        let mid_kept: BTreeMap<usize, usize> = next.kept.iter().copied().collect();
        let mut kept = Vec::new();
        let mut parent_to_children = BTreeMap::new();

        // Resolve one mid-level element to its final descendants.
        let resolve = |mid: usize, out: &mut Vec<usize>| {
            if let Some(&f) = mid_kept.get(&mid) {
                out.push(f);
            } else if let Some(children) = next.parent_to_children.get(&mid) {
                out.extend(children.iter().copied());
            }
        };

        for &(c, m) in &self.kept {
            if let Some(&f) = mid_kept.get(&m) {
                kept.push((c, f));
            } else {
                let mut leaves = Vec::new();
                resolve(m, &mut leaves);
                leaves.sort_unstable();
                parent_to_children.insert(c, leaves);
            }
        }
        for (&c, mids) in &self.parent_to_children {
            let mut leaves = Vec::new();
            for &m in mids {
                resolve(m, &mut leaves);
            }
            leaves.sort_unstable();
            parent_to_children.insert(c, leaves);
        }
        kept.sort_unstable();

        let mut new_vertices = self.new_vertices.clone();
        new_vertices.extend(next.new_vertices.iter().copied());

        Ok(RefinementMap {
            coarse: self.coarse,
            fine: next.fine,
            kept,
            parent_to_children,
            new_vertices,
            n_coarse_elements: self.n_coarse_elements,
            n_fine_elements: next.n_fine_elements,
            n_coarse_vertices: self.n_coarse_vertices,
            n_fine_vertices: next.n_fine_vertices,
        })
    }

    /// Carries vertex data to the fine mesh: old vertices copy their value,
    /// each midpoint vertex averages its two endpoints (in creation order, so
    /// midpoints of midpoints resolve).
    pub fn carry_vertex_values(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        if coarse.len() != self.n_coarse_vertices {
            return Err(Error::precondition(format!(
                "vertex data has {} entries, coarse mesh has {} vertices",
                coarse.len(),
                self.n_coarse_vertices
            )));
        }
        let mut out = vec![0.0; self.n_fine_vertices];
        out[..coarse.len()].copy_from_slice(coarse);
        for mv in &self.new_vertices {
            out[mv.index] = 0.5 * (out[mv.endpoints.0] + out[mv.endpoints.1]);
        }
        Ok(out)
    }

    /// Carries element data to the fine mesh: kept elements copy their value,
    /// children inherit the parent value.
    pub fn carry_element_values(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        if coarse.len() != self.n_coarse_elements {
            return Err(Error::precondition(format!(
                "element data has {} entries, coarse mesh has {} elements",
                coarse.len(),
                self.n_coarse_elements
            )));
        }
        let mut out = vec![0.0; self.n_fine_elements];
        for &(c, f) in &self.kept {
            out[f] = coarse[c];
        }
        for (&c, children) in &self.parent_to_children {
            for &f in children {
                out[f] = coarse[c];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_map(coarse: MeshId, fine: MeshId) -> RefinementMap {
        // 3 coarse elements: 0 kept as 2, 1 -> {0, 1}, 2 -> {3, 4}.
        RefinementMap {
            coarse,
            fine,
            kept: vec![(0, 2)],
            parent_to_children: BTreeMap::from([(1, vec![0, 1]), (2, vec![3, 4])]),
            new_vertices: vec![
                MidpointVertex { index: 4, endpoints: (0, 1) },
                MidpointVertex { index: 5, endpoints: (2, 3) },
            ],
            n_coarse_elements: 3,
            n_fine_elements: 5,
            n_coarse_vertices: 4,
            n_fine_vertices: 6,
        }
    }

    #[test]
    fn test_classify_splits_ids() {
        let m = toy_map(MeshId(1), MeshId(2));
        let c = m.classify();
        assert_eq!(c.kept_coarse, vec![0]);
        assert_eq!(c.kept_fine, vec![2]);
        assert_eq!(c.refined_coarse, vec![1, 2]);
        assert_eq!(c.new_fine, vec![0, 1, 3, 4]);
    }

    #[test]
    fn test_compose_rejects_uid_mismatch() {
        let a = toy_map(MeshId(1), MeshId(2));
        let b = toy_map(MeshId(7), MeshId(8));
        assert!(a.compose(&b).is_err());
    }

    #[test]
    fn test_carry_vertex_values_resolves_midpoint_chain() {
        let mut m = toy_map(MeshId(1), MeshId(2));
        // Second midpoint depends on the first.
        m.new_vertices = vec![
            MidpointVertex { index: 4, endpoints: (0, 1) },
            MidpointVertex { index: 5, endpoints: (4, 2) },
        ];
        let fine = m.carry_vertex_values(&[0.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(fine, vec![0.0, 2.0, 4.0, 6.0, 1.0, 2.5]);
    }

    #[test]
    fn test_carry_element_values_children_inherit() {
        let m = toy_map(MeshId(1), MeshId(2));
        let fine = m.carry_element_values(&[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(fine, vec![20.0, 20.0, 10.0, 30.0, 30.0]);
    }

    #[test]
    fn test_mesh_ids_are_unique() {
        let a = fresh_mesh_id();
        let b = fresh_mesh_id();
        assert_ne!(a, b);
    }
}
