//! Recall@K and NDCG@K on a hand-made ranking, and top-K with exclusions.

use bundlekit::eval::{ndcg_at_k, recall_at_k, top_k};
use ndarray::array;

fn main() -> bundlekit::Result<()> {
    let ranked = [1, 4, 2, 7, 3];
    let targets = [4, 3];
    for k in [1, 2, 5] {
        println!(
            "K={k}: recall {:.4} ndcg {:.4}",
            recall_at_k(&ranked, &targets, k)?,
            ndcg_at_k(&ranked, &targets, k)?
        );
    }
    let scores = array![0.1, 0.9, 0.4, 0.9, 0.2];
    println!("top 3 excluding item 1: {:?}", top_k(scores.view(), &[1], 3));
    Ok(())
}
