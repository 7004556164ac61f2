//! Saves a trained model, reloads it and checks that scores are bit-equal.

use bundlekit::checkpoint::Checkpoint;
use bundlekit::data::MemberView;
use bundlekit::model::ModelInputs;
use bundlekit::synthetic::tiny_fixture;
use bundlekit::train::train;
use bundlekit::TrainConfig;

fn main() -> bundlekit::Result<()> {
    let fx = tiny_fixture();
    let config = TrainConfig { d: 8, h: 2, max_epochs: 5, ..TrainConfig::default() };
    let out = train(&config, &fx.dataset, &fx.graph, |_| {})?;
    let ck = Checkpoint {
        model: out.model,
        optimizer: Some(out.optimizer),
        epoch: out.epochs_run,
        best: Some(out.best),
        data_checksum: None,
    };
    let dir = std::env::temp_dir().join("bundlekit_checkpoint_example");
    std::fs::create_dir_all(&dir).expect("create temp dir");
    let path = dir.join("model.ckpt");
    ck.save(&path)?;
    let back = Checkpoint::load(&path)?;

    let inputs = ModelInputs::new(&fx.dataset, &fx.graph, &ck.model.wiring)?;
    let catalog = &fx.dataset.catalog;
    let members: Vec<Vec<usize>> = (0..catalog.n_bundles())
        .map(|b| catalog.members(b, MemberView::Full).map(<[usize]>::to_vec))
        .collect::<bundlekit::Result<_>>()?;
    let a = ck.model.scores(&inputs, &members)?;
    let b = back.model.scores(&inputs, &members)?;
    let identical = a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!(
        "{} bytes, {} parameters, scores bit-identical after reload: {identical}",
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        back.model.params.len()
    );
    Ok(())
}
