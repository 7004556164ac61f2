//! The whole command-line workflow in-process: write raw planted files,
//! `prepare`, a small `--sweep` over γ, `eval` and `predict`.

use bundlekit::cli::run;
use bundlekit::synthetic::{planted, write_raw, PlantedConfig};

fn step(args: &[&str]) {
    let mut argv = vec!["bundlekit"];
    argv.extend_from_slice(args);
    println!("$ {}", argv.join(" "));
    let code = run(&argv, &mut std::io::stdout());
    assert_eq!(code, 0, "command failed");
}

fn main() -> bundlekit::Result<()> {
    let root = std::env::temp_dir().join("bundlekit_cli_example");
    let raw = root.join("raw");
    std::fs::create_dir_all(&raw).expect("create temp dir");
    let files = write_raw(&planted(&PlantedConfig::default())?.dataset, &raw)?;
    let p = |x: &std::path::Path| x.display().to_string();
    let (data, runs, eval) = (root.join("data"), root.join("runs"), root.join("eval"));

    step(&[
        "prepare",
        "--interactions", &p(&files.interactions),
        "--affiliations", &p(&files.affiliations),
        "--text", &p(&files.features[&bundlekit::data::Modality::Text]),
        "--visual", &p(&files.features[&bundlekit::data::Modality::Visual]),
        "--out", &p(&data),
    ]);
    step(&["train", "--data", &p(&data), "--out", &p(&runs), "--sweep", "gamma=0.3:0.7:0.2", "--max-epochs", "100"]);
    let ckpt = runs.join("gamma=0.5").join("model.ckpt");
    step(&["eval", "--checkpoint", &p(&ckpt), "--data", &p(&data), "--split", "valid,test", "--k", "10,20", "--out", &p(&eval)]);
    step(&["predict", "--checkpoint", &p(&ckpt), "--data", &p(&data), "--seeds", "i000,i001", "--k", "5"]);
    Ok(())
}
