//! Implicit encoder: dependency logits against learnable hyperedges,
//! Gumbel-Softmax relaxation, propagation and L_p normalisation.

use std::collections::BTreeMap;

use bundlekit::data::Modality;
use bundlekit::isl::{
    build_dependency, finalize_implicit, gumbel_sparsify, propagate_hypergraph, sparsify_dependency,
    HyperedgeBank, NoiseMode,
};
use bundlekit::synthetic::tiny_fixture;
use bundlekit::tensor::Csr;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> bundlekit::Result<()> {
    let f = tiny_fixture();
    let h = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let features: BTreeMap<Modality, Array2<f64>> = f
        .dataset
        .features
        .modalities()
        .map(|m| (m, f.dataset.features.get(m).unwrap().clone()))
        .collect();
    let edges = features
        .iter()
        .map(|(&m, x)| (m, Array2::from_shape_fn((h, x.ncols()), |_| rng.gen_range(-0.5..0.5))))
        .collect();
    let catalog = &f.dataset.catalog;
    let members: Vec<Vec<usize>> = (0..catalog.n_bundles()).map(|b| catalog.items(b).to_vec()).collect();
    let y = Csr::indicator(f.dataset.n_items(), &members);

    let deps = build_dependency(&features, &HyperedgeBank { edges }, &y)?;
    let relaxed = sparsify_dependency(&deps, 0.2, NoiseMode::Sample, &mut rng)?;
    println!("relaxed item 0 (text): {:.3}", relaxed[&Modality::Text].items.row(0));
    println!(
        "noise-free relaxation of [1, 2, 3] at tau 0.2: {:.4?}",
        gumbel_sparsify(&[1.0, 2.0, 3.0], 0.2, NoiseMode::Disabled, &mut rng)?
    );

    // the model propagates its collaborative item embeddings; random stand-ins here
    let ids = Array2::from_shape_fn((f.dataset.n_items(), 4), |_| rng.gen_range(-0.5..0.5));
    let states = features
        .keys()
        .map(|m| propagate_hypergraph(&relaxed[m].items, &relaxed[m].bundles, &ids, 1))
        .collect::<bundlekit::Result<Vec<_>>>()?;
    let phi = finalize_implicit(&states, 2.0)?;
    println!("implicit items {:?}, bundles {:?}", phi.items.dim(), phi.bundles.dim());
    println!("bundle 0: {:.3}", phi.bundles.row(0));
    Ok(())
}
