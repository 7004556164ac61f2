//! Co-purchase counts `E = XᵀX` and the thresholded item graph.

use bundlekit::data::InteractionMatrix;
use bundlekit::graph::{build_copurchase, threshold_graph};
use ndarray::array;

fn main() -> bundlekit::Result<()> {
    let x = InteractionMatrix::from_dense(&array![[1, 1, 0], [1, 1, 1]]);
    let e = build_copurchase(&x);
    println!("E =\n{}", e.to_dense());
    for eps in [1, 2] {
        let g = threshold_graph(&e, eps)?;
        let edges: Vec<_> = g.edges().collect();
        println!("epsilon {eps}: {} undirected edges {edges:?}", g.n_edges());
    }
    Ok(())
}
