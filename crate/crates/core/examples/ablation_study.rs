//! Full model against each explicit-encoder ablation on the planted
//! dataset, averaged over three training seeds.

use bundlekit::data::Split;
use bundlekit::eval::rank_candidates;
use bundlekit::model::ModelInputs;
use bundlekit::synthetic::{planted, PlantedConfig};
use bundlekit::train::train;
use bundlekit::{Ablation, TrainConfig};

fn main() -> bundlekit::Result<()> {
    let fx = planted(&PlantedConfig::default())?;
    let variants = [None, Some(Ablation::NoCbse), Some(Ablation::NoCrse), Some(Ablation::NoIsl), Some(Ablation::NoMad)];
    println!("variant,mean_test_R@20,mean_test_N@20");
    for v in variants {
        let (mut r, mut n) = (0.0, 0.0);
        for seed in 1..=3 {
            let mut config = TrainConfig { max_epochs: 300, rng_seed: seed, ..TrainConfig::default() };
            if let Some(a) = v {
                config.ablate(a);
            }
            let out = train(&config, &fx.dataset, &fx.graph, |_| {})?;
            let inputs = ModelInputs::new(&fx.dataset, &fx.graph, &out.model.wiring)?;
            let m = rank_candidates(&out.model, &inputs, &fx.dataset.catalog, Split::Test, &[20])?
                .at(20)
                .expect("K=20 requested");
            r += m.recall / 3.0;
            n += m.ndcg / 3.0;
        }
        println!("{},{r:.4},{n:.4}", v.map_or("full", Ablation::name));
    }
    Ok(())
}
