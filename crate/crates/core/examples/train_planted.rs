//! Trains the full model on the planted dataset and reports per-epoch
//! validation, training-bundle reconstruction and test completion.

use bundlekit::data::Split;
use bundlekit::eval::{rank_candidates, rank_reconstruction};
use bundlekit::model::ModelInputs;
use bundlekit::synthetic::{planted, PlantedConfig};
use bundlekit::train::{train, LOG_HEADER};
use bundlekit::TrainConfig;

fn main() -> bundlekit::Result<()> {
    let fx = planted(&PlantedConfig::default())?;
    let config = TrainConfig { max_epochs: 300, ..TrainConfig::default() };
    println!("{LOG_HEADER}");
    let outcome = train(&config, &fx.dataset, &fx.graph, |e| println!("{}", e.csv_row()))?;
    println!("best epoch {} of {}", outcome.best.epoch, outcome.epochs_run);

    let inputs = ModelInputs::new(&fx.dataset, &fx.graph, &outcome.model.wiring)?;
    let catalog = &fx.dataset.catalog;
    let recon = rank_reconstruction(&outcome.model, &inputs, catalog, &[10, 20])?;
    let test = rank_candidates(&outcome.model, &inputs, catalog, Split::Test, &[10, 20])?;
    print!("{}", bundlekit::eval::metrics_csv(&[recon, test]));
    Ok(())
}
