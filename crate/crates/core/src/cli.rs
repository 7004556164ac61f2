//! Command-line front end: `prepare`, `train`, `eval` and `predict`.
//!
//! Exit codes: 0 success, 1 runtime failure (non-finite values during
//! training), 2 usage or input error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::checkpoint::Checkpoint;
use crate::config::{Ablation, TrainConfig};
use crate::data::io::{load_dataset, load_prepared, save_prepared, DatasetPaths};
use crate::data::{split_bundles, Dataset, Modality, Split, SplitRatio};
use crate::error::{Error, Result};
use crate::eval::{metrics_csv, rank_candidates, rank_reconstruction, top_k, topk_csv, RankingResult};
use crate::graph::{build_copurchase, threshold_graph, ItemGraph};
use crate::manifest::{digest_without_last_column, file_sha256, sha256_hex, RunManifest};
use crate::model::{Model, ModelInputs};
use crate::train::{log_csv, train, VALID_K};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Debug, Parser)]
#[command(name = "bundlekit", version, about = "Bundle construction with explicit and implicit multi-modal encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load raw files, split bundles and write a prepared dataset directory.
    Prepare(PrepareArgs),
    /// Train one model, or one per sweep value / ablation variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one or more splits.
    Eval(EvalArgs),
    /// Complete a partial bundle given its seed item IDs.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// `user_id<TAB>item_id` lines.
    #[arg(long)]
    pub interactions: PathBuf,
    /// `bundle_id<TAB>item_id` lines.
    #[arg(long)]
    pub affiliations: PathBuf,
    /// Textual feature file (RMFB with `.ids` sidecar).
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Visual feature file (RMFB with `.ids` sidecar).
    #[arg(long)]
    pub visual: Option<PathBuf>,
    /// Output directory of the prepared dataset.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the split and of the seed/target masks.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Fraction of each held-out bundle masked as targets.
    #[arg(long, default_value_t = 0.5)]
    pub mask_fraction: f64,
    /// Train, valid and test proportions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.1, 0.2])]
    pub ratio: Vec<f64>,
}

#[derive(Debug, Args)]
#[command(after_help = "Any config key may also be overridden as a trailing `--key value` pair, e.g. `--gamma 0.3 --h 16`.")]
pub struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Ablation variant: comma-separated flags applied together, or `none`.
    /// Repeat to train one model per variant.
    #[arg(long, value_name = "FLAGS")]
    pub ablate: Vec<String>,
    /// `key=start:stop:step` or `key=v1,v2,...`; repeat for a grid.
    #[arg(long, value_name = "KEY=VALUES")]
    pub sweep: Vec<String>,
    /// Trailing `--key value` config overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prepared dataset directory the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Splits to evaluate; `train` means training-bundle reconstruction.
    #[arg(long, value_delimiter = ',', default_value = "test")]
    pub split: Vec<Split>,
    /// Cut-offs.
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20])]
    pub k: Vec<usize>,
    /// Output directory for the metrics CSV and top-K dumps.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Seed item IDs of the partial bundle.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<String>,
    /// Number of completions; clamped to the candidate pool.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Also write `predictions.csv` and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command, writing
/// user-facing output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let raw: Vec<String> = args.iter().skip(2).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, raw, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, raw_args: Vec<String>, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a, raw_args, out),
        Command::Train(a) => train_cmd(a, raw_args, out),
        Command::Eval(a) => eval_cmd(a, raw_args, out),
        Command::Predict(a) => predict(a, raw_args, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_output(manifest: &mut RunManifest, root: &Path, name: &str, text: &str) -> Result<()> {
    let path = root.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    manifest.add_output(name, sha256_hex(text.as_bytes()));
    Ok(())
}

fn prepare(a: PrepareArgs, raw_args: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let mut manifest = RunManifest::begin("prepare", raw_args);
    manifest.seed = Some(a.seed);
    let mut features = BTreeMap::new();
    for (m, path) in [(Modality::Text, &a.text), (Modality::Visual, &a.visual)] {
        if let Some(p) = path {
            if !p.is_file() {
                return Err(Error::Input(format!("missing {m} feature file {}", p.display())));
            }
            features.insert(m, p.clone());
        }
    }
    if features.is_empty() {
        return Err(Error::Input("at least one of --text / --visual is required".into()));
    }
    let ratio = SplitRatio {
        train: a.ratio[0],
        valid: a.ratio[1],
        test: a.ratio[2],
    };
    let mut data = load_dataset(&a.interactions, &a.affiliations, &features)?;
    data.catalog = split_bundles(data.catalog, ratio, a.mask_fraction, a.seed)?;

    manifest.add_input(&a.interactions)?;
    manifest.add_input(&a.affiliations)?;
    for p in features.values() {
        manifest.add_input(p)?;
        let mut ids = p.as_os_str().to_owned();
        ids.push(".ids");
        manifest.add_input(Path::new(&ids))?;
    }

    create_dir(&a.out)?;
    let paths = DatasetPaths::new(&a.out);
    save_prepared(&paths, &data)?;
    for f in paths.files(data.features.modalities()).into_iter().chain([paths.stats()]) {
        let name = f.strip_prefix(&a.out).unwrap_or(&f).display().to_string();
        manifest.add_output(&name, file_sha256(&f)?);
    }
    let m = manifest.finish(&a.out)?;
    let stats = data.stats();
    emit(
        out,
        &format!(
            "{}\n{}\nmanifest checksum {}\n",
            crate::data::DatasetStats::table_header(),
            stats.table_row(),
            m.checksum
        ),
    )
}

/// A prepared dataset plus the digest of its store files.
struct Store {
    data: Dataset,
    files: Vec<PathBuf>,
    checksum: String,
}

fn open_store(dir: &Path) -> Result<Store> {
    let paths = DatasetPaths::new(dir);
    let data = load_prepared(&paths)?;
    let files = paths.files(data.features.modalities());
    let mut digests = String::new();
    for f in &files {
        digests.push_str(&file_sha256(f)?);
    }
    Ok(Store {
        data,
        files,
        checksum: sha256_hex(digests.as_bytes()),
    })
}

fn build_graph(data: &Dataset, epsilon: i64) -> Result<ItemGraph> {
    threshold_graph(&build_copurchase(&data.interactions), epsilon)
}

/// Expands one `--sweep` argument into `(key, values)`.
pub fn parse_sweep(arg: &str) -> Result<(String, Vec<String>)> {
    let bad = || Error::Config(format!("sweep `{arg}` is not `key=start:stop:step` or `key=v1,v2,...`"));
    let (key, values) = arg.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = values.split(':').collect();
    let list = match parts.as_slice() {
        [start, stop, step] => {
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                return Err(bad());
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            // rounding keeps `0.1 + 2 * 0.1` printing as 0.3
            (0..count)
                .map(|k| format!("{}", ((start + k as f64 * step) * 1e10).round() / 1e10))
                .collect()
        }
        [_] => values.split(',').map(|v| v.trim().to_string()).collect::<Vec<_>>(),
        _ => return Err(bad()),
    };
    if list.iter().any(String::is_empty) {
        return Err(bad());
    }
    Ok((key.trim().to_string(), list))
}

/// Pairs up trailing `--key value` / `--key=value` arguments.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("unexpected argument `{a}`, expected `--key value`")))?;
        match key.split_once('=') {
            Some((k, v)) => pairs.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("`--{key}` needs a value")))?;
                pairs.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(pairs)
}

fn parse_variant(arg: &str) -> Result<Vec<Ablation>> {
    if arg.trim() == "none" {
        return Ok(Vec::new());
    }
    arg.split(',').map(|s| s.trim().parse()).collect()
}

/// One planned training run.
#[derive(Debug, Clone)]
struct RunPlan {
    name: String,
    ablation: String,
    sweep: Vec<(String, String)>,
    config: TrainConfig,
}

fn plan_runs(a: &TrainArgs) -> Result<Vec<RunPlan>> {
    let mut base = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        base.rng_seed = s;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
        base.set(k, v)?;
    }
    for (k, v) in parse_overrides(&a.overrides)? {
        base.set(&k, &v)?;
    }
    base.validate()?;

    let mut grid: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for arg in &a.sweep {
        let (key, values) = parse_sweep(arg)?;
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                let key = &key;
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((key.clone(), v.clone()));
                    p
                })
            })
            .collect();
    }
    let variants: Vec<String> = if a.ablate.is_empty() {
        vec!["none".into()]
    } else {
        a.ablate.clone()
    };

    let mut runs = Vec::new();
    for variant in &variants {
        let flags = parse_variant(variant)?;
        for point in &grid {
            let mut cfg = base.clone();
            for (k, v) in point {
                cfg.set(k, v)?;
            }
            for &f in &flags {
                cfg.ablate(f);
            }
            cfg.validate()?;
            let mut name: Vec<String> = point.iter().map(|(k, v)| format!("{k}={v}")).collect();
            if !a.ablate.is_empty() {
                name.insert(0, variant.replace(',', "+"));
            }
            runs.push(RunPlan {
                name: if name.is_empty() { "run".into() } else { name.join("_") },
                ablation: variant.clone(),
                sweep: point.clone(),
                config: cfg,
            });
        }
    }
    Ok(runs)
}

fn train_cmd(a: TrainArgs, raw_args: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let runs = plan_runs(&a)?;
    let store = open_store(&a.data)?;
    let mut manifest = RunManifest::begin("train", raw_args);
    manifest.seed = Some(runs[0].config.rng_seed);
    for f in store.files.iter().chain(a.config.iter()) {
        manifest.add_input(f)?;
    }
    create_dir(&a.out)?;

    let sweep_keys: Vec<String> = runs[0].sweep.iter().map(|(k, _)| k.clone()).collect();
    let mut summary = String::from("run,ablation");
    for k in &sweep_keys {
        write!(summary, ",{k}").expect("write to string");
    }
    summary.push_str(",epochs_run,best_epoch,valid_R@20,valid_N@20,test_R@20,test_N@20\n");

    let single = runs.len() == 1;
    for plan in &runs {
        let prefix = if single { String::new() } else { format!("{}/", plan.name) };
        let dir = a.out.join(&prefix);
        create_dir(&dir)?;
        info!("training run {} ({} epochs max)", plan.name, plan.config.max_epochs);
        let graph = build_graph(&store.data, plan.config.epsilon)?;
        let outcome = train(&plan.config, &store.data, &graph, |_| {})?;

        let log = log_csv(&outcome.log);
        let log_path = dir.join(LOG_FILE);
        fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
        manifest.add_output(&format!("{prefix}{LOG_FILE}"), digest_without_last_column(&log));

        let ck = Checkpoint {
            model: outcome.model,
            optimizer: Some(outcome.optimizer),
            epoch: outcome.epochs_run,
            best: Some(outcome.best),
            data_checksum: Some(store.checksum.clone()),
        };
        let bytes = ck.to_bytes()?;
        let ck_path = dir.join(CHECKPOINT_FILE);
        fs::write(&ck_path, &bytes).map_err(|e| Error::io(&ck_path, e))?;
        manifest.add_output(&format!("{prefix}{CHECKPOINT_FILE}"), sha256_hex(&bytes));

        let inputs = ModelInputs::new(&store.data, &graph, &ck.model.wiring)?;
        let test = rank_candidates(&ck.model, &inputs, &store.data.catalog, Split::Test, &[VALID_K])?;
        let t = test.at(VALID_K).expect("requested K");
        write!(summary, "{},{}", plan.name, plan.ablation.replace(',', "+")).expect("write to string");
        for (_, v) in &plan.sweep {
            write!(summary, ",{v}").expect("write to string");
        }
        writeln!(
            summary,
            ",{},{},{},{},{},{}",
            outcome.epochs_run, outcome.best.epoch, outcome.best.recall, outcome.best.ndcg, t.recall, t.ndcg
        )
        .expect("write to string");
        manifest.configs.push(plan.config.clone());
    }
    write_output(&mut manifest, &a.out, SUMMARY_FILE, &summary)?;
    manifest.finish(&a.out)?;
    emit(out, &summary)
}

/// Checkpoint, dataset and model inputs for eval/predict.
fn open_model(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, Store, ModelInputs)> {
    let ck = Checkpoint::load(checkpoint)?;
    let store = open_store(data)?;
    if ck.data_checksum.as_deref().is_some_and(|c| c != store.checksum) {
        warn!("{} was trained on different data than {}", checkpoint.display(), data.display());
    }
    let graph = build_graph(&store.data, ck.model.config.epsilon)?;
    let inputs = ModelInputs::new(&store.data, &graph, &ck.model.wiring)?;
    Ok((ck, store, inputs))
}

fn eval_cmd(a: EvalArgs, raw_args: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let (ck, store, inputs) = open_model(&a.checkpoint, &a.data)?;
    let mut manifest = RunManifest::begin("eval", raw_args);
    manifest.seed = Some(ck.model.config.rng_seed);
    manifest.configs.push(ck.model.config.clone());
    manifest.add_input(&a.checkpoint)?;
    for f in &store.files {
        manifest.add_input(f)?;
    }
    create_dir(&a.out)?;
    let catalog = &store.data.catalog;
    let mut results: Vec<RankingResult> = Vec::new();
    for &split in &a.split {
        let r = match split {
            Split::Train => rank_reconstruction(&ck.model, &inputs, catalog, &a.k)?,
            s => rank_candidates(&ck.model, &inputs, catalog, s, &a.k)?,
        };
        let dump = topk_csv(&r, &catalog.bundle_vocab, store.data.item_vocab());
        write_output(&mut manifest, &a.out, &format!("topk_{split}.csv"), &dump)?;
        results.push(r);
    }
    let metrics = metrics_csv(&results);
    write_output(&mut manifest, &a.out, METRICS_FILE, &metrics)?;
    manifest.finish(&a.out)?;
    emit(out, &metrics)
}

/// Ranks completions of a partial bundle given by external item IDs.
pub fn complete_bundle(
    model: &Model,
    inputs: &ModelInputs,
    items: &crate::data::Vocab,
    seeds: &[String],
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if seeds.is_empty() {
        return Err(Error::Input("empty seed list".into()));
    }
    if k == 0 {
        return Err(Error::Input("K must be at least 1".into()));
    }
    let mut idx = Vec::with_capacity(seeds.len());
    for s in seeds {
        idx.push(items.get(s).ok_or_else(|| Error::UnknownItem(s.clone()))?);
    }
    idx.sort_unstable();
    idx.dedup();
    let scores = model.scores(inputs, std::slice::from_ref(&idx))?;
    Ok(top_k(scores.row(0), &idx, k)
        .into_iter()
        .map(|(i, s)| (items.id(i).to_string(), s))
        .collect())
}

fn predict(a: PredictArgs, raw_args: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let (ck, store, inputs) = open_model(&a.checkpoint, &a.data)?;
    let seeds: Vec<String> = a.seeds.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).map(String::from).collect();
    let ranked = complete_bundle(&ck.model, &inputs, store.data.item_vocab(), &seeds, a.k)?;
    let mut text = String::from("rank,item_id,score\n");
    for (r, (id, s)) in ranked.iter().enumerate() {
        writeln!(text, "{},{id},{s}", r + 1).expect("write to string");
    }
    if let Some(dir) = &a.out {
        let mut manifest = RunManifest::begin("predict", raw_args);
        manifest.seed = Some(ck.model.config.rng_seed);
        manifest.configs.push(ck.model.config.clone());
        manifest.add_input(&a.checkpoint)?;
        for f in &store.files {
            manifest.add_input(f)?;
        }
        create_dir(dir)?;
        write_output(&mut manifest, dir, PREDICTIONS_FILE, &text)?;
        manifest.finish(dir)?;
    }
    emit(out, &text)
}
