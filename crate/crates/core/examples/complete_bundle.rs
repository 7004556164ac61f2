//! Completes a partial bundle: a training bundle minus one item is fed to
//! a trained model and the held-out item is looked up in the ranking.

use bundlekit::cli::complete_bundle;
use bundlekit::data::Split;
use bundlekit::model::ModelInputs;
use bundlekit::synthetic::{planted, PlantedConfig};
use bundlekit::train::train;
use bundlekit::TrainConfig;

fn main() -> bundlekit::Result<()> {
    let fx = planted(&PlantedConfig::default())?;
    let config = TrainConfig { max_epochs: 300, ..TrainConfig::default() };
    let out = train(&config, &fx.dataset, &fx.graph, |_| {})?;
    let inputs = ModelInputs::new(&fx.dataset, &fx.graph, &out.model.wiring)?;
    let items = fx.dataset.item_vocab();
    let b = fx.dataset.catalog.bundles_in(Split::Train)[0];
    let members = fx.dataset.catalog.items(b);
    let held_out = items.id(*members.last().expect("bundles have ≥ 2 items"));
    let seeds: Vec<String> = members[..members.len() - 1].iter().map(|&i| items.id(i).to_string()).collect();

    let ranked = complete_bundle(&out.model, &inputs, items, &seeds, 10)?;
    println!("seeds {seeds:?}, held out {held_out}");
    println!("rank,item_id,score");
    for (r, (id, s)) in ranked.iter().enumerate() {
        let mark = if id == held_out { "  <- held out" } else { "" };
        println!("{},{id},{s:.4}{mark}", r + 1);
    }
    Ok(())
}
