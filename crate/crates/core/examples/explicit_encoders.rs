//! Explicit encoders on the tiny fixture: characteristic attention over
//! fused modality/ID rows, graph attention over co-purchase neighbours and
//! the γ-mixture of both views.

use std::collections::BTreeMap;

use bundlekit::data::{MemberView, Modality};
use bundlekit::esl::{
    aggregate_bundle_collaborative, encode_bundles_characteristic, encode_collaborative,
    encode_item_characteristic, fuse_item, mix_explicit, project_modalities, Affine, AttentionLayer,
    CollabMode, CollaborativeAttention, CollaborativeLayer, SemanticProjector,
};
use bundlekit::synthetic::tiny_fixture;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> bundlekit::Result<()> {
    let f = tiny_fixture();
    let d = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut mat = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.gen_range(-0.5..0.5));

    let maps: BTreeMap<Modality, Affine> = f
        .dataset
        .features
        .modalities()
        .map(|m| {
            let dm = f.dataset.features.dim(m).unwrap();
            (m, Affine { weight: mat(dm, d), bias: Array1::zeros(d) })
        })
        .collect();
    let mu = project_modalities(&f.dataset.features, &SemanticProjector { maps })?;
    let ids = mat(f.dataset.n_items(), d);
    let fusion = mat(d, 2 * d);
    let layers = vec![AttentionLayer { key: mat(d, d), query: mat(d, d) }];

    let n = f.dataset.n_items();
    let mut p_items = Array2::zeros((n, d));
    for i in 0..n {
        let rho = fuse_item(
            &mu[&Modality::Visual].row(i).to_owned(),
            &mu[&Modality::Text].row(i).to_owned(),
            &ids.row(i).to_owned(),
            &fusion,
        )?;
        p_items.row_mut(i).assign(&encode_item_characteristic(&rho, &layers)?);
    }
    let catalog = &f.dataset.catalog;
    let bundles: Vec<usize> = (0..catalog.n_bundles()).collect();
    let members: Vec<Vec<usize>> = bundles.iter().map(|&b| catalog.items(b).to_vec()).collect();
    let p_bundles = encode_bundles_characteristic(&p_items, &members, &layers, 0)?;

    let attn = CollaborativeAttention {
        layers: vec![CollaborativeLayer {
            target: mat(d, d),
            source: mat(d, d),
            bias: Array1::zeros(d),
            context: mat(1, d).row(0).to_owned(),
        }],
        beta: 0.5,
        slope: 0.2,
        mode: CollabMode::Stacked,
    };
    let c_items = encode_collaborative(&ids, &f.graph, &attn)?;
    let c_bundles = aggregate_bundle_collaborative(&c_items, catalog, &bundles, MemberView::Full)?;
    let g = mix_explicit(&p_items, &c_items, &p_bundles, &c_bundles, 0.5)?;
    println!("item embeddings {:?}, bundle embeddings {:?}", g.items.dim(), g.bundles.dim());
    println!("bundle 0: {:.3}", g.bundles.row(0));
    Ok(())
}
