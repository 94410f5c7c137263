//! Newest-vertex bisection on the L-shaped domain: mark the elements touching
//! the reentrant corner, refine, and classify the element overlap between the
//! two meshes.
//!
//! ```bash
//! cargo run --example nvb_refinement
//! ```

use estconv::mesh2d::Mesh2D;

fn main() -> estconv::Result<()> {
    let (mesh, _) = Mesh2D::l_shape().refine_all()?;
    println!(
        "L-shape after one uniform round: {} vertices, {} elements",
        mesh.n_vertices(),
        mesh.n_elements()
    );

    let marked: Vec<usize> = (0..mesh.n_elements())
        .filter(|&e| {
            mesh.elements[e].v.iter().any(|&v| {
                let p = mesh.vertices[v];
                p.x == 0.0 && p.y == 0.0
            })
        })
        .collect();
    println!("marking the {} elements at the corner: {marked:?}", marked.len());

    let (fine, map) = mesh.refine_nvb(&marked)?;
    println!(
        "refined: {} vertices, {} elements (closure keeps the mesh conforming)",
        fine.n_vertices(),
        fine.n_elements()
    );

    let classes = map.classify();
    println!(
        "coarse mesh: {} kept, {} split; fine mesh: {} inherited, {} new",
        classes.kept_coarse.len(),
        classes.refined_coarse.len(),
        classes.kept_fine.len(),
        classes.new_fine.len()
    );
    for (parent, children) in &map.parent_to_children {
        println!("  element {parent} -> children {children:?}");
    }

    println!("\nfine mesh as text:\n{}", fine.to_text());
    Ok(())
}
