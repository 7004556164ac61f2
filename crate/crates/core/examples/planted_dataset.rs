//! Generates the planted 60-item dataset and writes it as raw input files
//! (`interactions.tsv`, `affiliations.tsv`, `text.rmfb`, `visual.rmfb`)
//! ready for `bundlekit prepare`.
//!
//! Usage: `cargo run --example planted_dataset -- <out-dir>`

use std::path::PathBuf;

use bundlekit::synthetic::{planted, write_raw, PlantedConfig};

fn main() -> bundlekit::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "planted_raw".into()));
    std::fs::create_dir_all(&dir).expect("create output directory");
    let fx = planted(&PlantedConfig::default())?;
    let files = write_raw(&fx.dataset, &dir)?;
    println!("{}", bundlekit::data::DatasetStats::table_header());
    println!("{}", fx.dataset.stats().table_row());
    println!("co-purchase edges at epsilon 1: {}", fx.graph.n_edges());
    println!("wrote {} and {}", files.interactions.display(), files.affiliations.display());
    for (m, p) in &files.features {
        println!("wrote {m} features to {}", p.display());
    }
    Ok(())
}
