//! Command implementations, independent of argument parsing.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use deform_gnn_core::analysis::{analyze, AnalysisReport};
use deform_gnn_core::checks::{check_model_gradients, toy_config, toy_dataset, GroupReport};
use deform_gnn_core::graph::{
    load_dataset_dir, make_splits, save_dataset_dir, Dataset, DatasetStats, SplitMasks, SplitPart, SyntheticSpec,
    DEFAULT_FRACTIONS,
};
use deform_gnn_core::model::{GraphContext, Model};
use deform_gnn_core::tensor::OpKind;
use deform_gnn_core::train::{evaluate, train, EpochLog, Summary, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{expand_grid, render, scalar, Settings};
use crate::error::{CliError, Result};
use crate::webkb;

pub const SUMMARY_FILE: &str = "summary.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "model.json";

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Dir(PathBuf),
    Synthetic(SyntheticSpec),
}

impl DataSource {
    /// Exactly one of `dataset` and `synthetic` must be given.
    pub fn new(dataset: Option<&str>, synthetic: Option<&str>) -> Result<Self> {
        match (dataset, synthetic) {
            (Some(d), None) => Ok(DataSource::Dir(PathBuf::from(d))),
            (None, Some(s)) => Ok(DataSource::Synthetic(s.parse()?)),
            (None, None) => Err(CliError::Config("no dataset: give --dataset or --synthetic".into())),
            (Some(_), Some(_)) => Err(CliError::Config("give only one of --dataset and --synthetic".into())),
        }
    }

    pub fn from_settings(settings: &Settings) -> Result<Self> {
        Self::new(
            settings.get("dataset").map(String::as_str),
            settings.get("synthetic").map(String::as_str),
        )
    }

    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DataSource::Dir(dir) => load_dataset_dir(dir)?,
            DataSource::Synthetic(spec) => spec.generate()?,
        })
    }

    pub fn describe(&self) -> String {
        match self {
            DataSource::Dir(dir) => dir.display().to_string(),
            DataSource::Synthetic(spec) => format!("synthetic:{spec}"),
        }
    }
}

/// The first `count` stored splits, or freshly drawn 48/32/20 splits when
/// the dataset has none. `count` defaults to all stored splits, or one.
pub fn choose_splits(dataset: &Dataset, count: Option<usize>, split_seed: u64) -> Result<Vec<SplitMasks>> {
    let stored = dataset.splits();
    if !stored.is_empty() {
        let count = count.unwrap_or(stored.len());
        if count > stored.len() {
            return Err(CliError::Config(format!(
                "{count} splits requested, the dataset stores {}",
                stored.len()
            )));
        }
        return Ok(stored[..count].to_vec());
    }
    Ok(make_splits(
        dataset.labels(),
        dataset.num_classes(),
        DEFAULT_FRACTIONS,
        count.unwrap_or(1),
        split_seed,
    )?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub split: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub index: usize,
    pub config: TrainConfig,
    pub val: Summary,
    pub test: Summary,
    pub runs: Vec<RunResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub dataset: String,
    pub splits: usize,
    pub seeds: usize,
    /// Grid point with the highest mean validation accuracy (first on ties).
    pub selected: usize,
    pub grid: Vec<GridResult>,
}

impl TrainSummary {
    pub fn best(&self) -> &GridResult {
        &self.grid[self.selected]
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

struct Job {
    grid: usize,
    split: usize,
    seed_index: usize,
}

fn run_dir(out: &Path, job: &Job) -> PathBuf {
    out.join(format!("grid_{}", job.grid))
        .join(format!("split_{}_seed_{}", job.split, job.seed_index))
}

fn run_one(
    job: &Job,
    base: &TrainConfig,
    ctx: &GraphContext,
    split: &SplitMasks,
    out: &Path,
) -> Result<RunResult> {
    let mut config = base.clone();
    config.seed = base.seed + job.seed_index as u64;
    let dir = run_dir(out, job);
    create_dir(&dir)?;
    write_file(&dir.join(RESOLVED_CONFIG_FILE), render(&config).as_bytes())?;
    let outcome = train(ctx, split, &config)?;
    write_metrics(&dir.join(METRICS_FILE), &outcome.log)?;
    outcome.model.save(&dir.join(CHECKPOINT_FILE))?;
    log::info!(
        "grid {} split {} seed {}: best epoch {}, val {:.4}, test {:.4}",
        job.grid,
        job.split,
        config.seed,
        outcome.best_epoch,
        outcome.val_acc,
        outcome.test_acc
    );
    Ok(RunResult {
        split: job.split,
        seed: config.seed,
        best_epoch: outcome.best_epoch,
        val_acc: outcome.val_acc,
        test_acc: outcome.test_acc,
    })
}

fn write_metrics(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut text = Vec::new();
    for entry in log {
        serde_json::to_writer(&mut text, entry)?;
        text.push(b'\n');
    }
    write_file(path, &text)
}

/// Runs every grid point on every split and seed, writing per-run
/// directories and `summary.json` under `out`.
pub fn train_command(settings: &Settings, out: &Path, jobs: usize) -> Result<TrainSummary> {
    let source = DataSource::from_settings(settings)?;
    let grid = expand_grid(settings)?;
    let num_splits: Option<usize> = match settings.get("splits") {
        Some(_) => Some(scalar(settings, "splits", 1)?),
        None => None,
    };
    let num_seeds: usize = scalar(settings, "seeds", 1)?;
    let split_seed: u64 = scalar(settings, "split_seed", 0)?;
    if num_seeds == 0 || num_splits == Some(0) {
        return Err(CliError::Config("splits and seeds must be at least 1".into()));
    }

    let dataset = source.load()?;
    let splits = choose_splits(&dataset, num_splits, split_seed)?;
    create_dir(out)?;
    let mut echo = String::new();
    for (key, value) in settings {
        echo.push_str(&format!("{key} = {value}\n"));
    }
    for (g, config) in grid.iter().enumerate() {
        echo.push_str(&format!("\n# grid point {g}\n{}", render(config)));
    }
    write_file(&out.join(RESOLVED_CONFIG_FILE), echo.as_bytes())?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let results = pool.install(|| -> Result<Vec<GridResult>> {
        let contexts = grid
            .iter()
            .map(|c| GraphContext::build(&dataset, &c.model).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()?;
        let work: Vec<Job> = (0..grid.len())
            .flat_map(|g| {
                (0..splits.len()).flat_map(move |split| (0..num_seeds).map(move |seed_index| Job { grid: g, split, seed_index }))
            })
            .collect();
        let runs = work
            .par_iter()
            .map(|job| run_one(job, &grid[job.grid], &contexts[job.grid], &splits[job.split], out))
            .collect::<Result<Vec<_>>>()?;
        let per_point = splits.len() * num_seeds;
        grid.iter()
            .enumerate()
            .map(|(g, config)| {
                let runs = runs[g * per_point..(g + 1) * per_point].to_vec();
                let val: Vec<f64> = runs.iter().map(|r| r.val_acc).collect();
                let test: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
                Ok(GridResult {
                    index: g,
                    config: config.clone(),
                    val: Summary::from_values(&val)?,
                    test: Summary::from_values(&test)?,
                    runs,
                })
            })
            .collect()
    })?;

    let mut selected = 0;
    for (g, r) in results.iter().enumerate() {
        if r.val.mean > results[selected].val.mean {
            selected = g;
        }
    }
    let summary = TrainSummary {
        dataset: source.describe(),
        splits: splits.len(),
        seeds: num_seeds,
        selected,
        grid: results,
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_file(&out.join(SUMMARY_FILE), &json)?;
    Ok(summary)
}

/// Fails unless the checkpoint's input and output widths fit the dataset,
/// naming the first and last weight tensors on mismatch.
pub fn check_compatible(model: &Model, dataset: &Dataset) -> Result<()> {
    let params = model.params();
    let first = &params.get(0).name;
    let last = params
        .iter()
        .filter(|p| p.value.shape().len() == 2)
        .last()
        .map_or(first, |p| &p.name);
    if model.num_features() != dataset.num_features() {
        return Err(CliError::Config(format!(
            "checkpoint tensor {first} expects {} input features, dataset has {}",
            model.num_features(),
            dataset.num_features()
        )));
    }
    if model.num_classes() != dataset.num_classes() {
        return Err(CliError::Config(format!(
            "checkpoint tensor {last} expects {} classes, dataset has {}",
            model.num_classes(),
            dataset.num_classes()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Accuracy of a saved model on one split of a dataset.
pub fn eval_command(checkpoint: &Path, source: &DataSource, split: usize, split_seed: u64) -> Result<EvalReport> {
    let model = Model::load(checkpoint)?;
    let dataset = source.load()?;
    check_compatible(&model, &dataset)?;
    let splits = choose_splits(&dataset, Some(split + 1), split_seed)?;
    let ctx = GraphContext::build(&dataset, model.config())?;
    let masks = &splits[split];
    Ok(EvalReport {
        split,
        train_acc: evaluate(&model, &ctx, masks, SplitPart::Train)?,
        val_acc: evaluate(&model, &ctx, masks, SplitPart::Val)?,
        test_acc: evaluate(&model, &ctx, masks, SplitPart::Test)?,
    })
}

/// Writes the three analysis tables for a saved deformable model. Without
/// `targets`, receptive fields are computed for every node.
pub fn analyze_command(
    checkpoint: &Path,
    source: &DataSource,
    out: &Path,
    targets: Option<&[usize]>,
) -> Result<AnalysisReport> {
    let model = Model::load(checkpoint)?;
    let dataset = source.load()?;
    check_compatible(&model, &dataset)?;
    let ctx = GraphContext::build(&dataset, model.config())?;
    let all: Vec<usize> = (0..dataset.num_nodes()).collect();
    let report = analyze(&model, &ctx, targets.unwrap_or(&all))?;
    report.export(out)?;
    Ok(report)
}

/// Finite-difference check of every parameter group on the toy graph.
pub fn gradcheck_command(epsilon: f64, dropout: f64, fault: Option<OpKind>) -> Result<Vec<GroupReport>> {
    let mut config = toy_config();
    config.model.dropout = dropout;
    Ok(check_model_gradients(&toy_dataset(), &config, epsilon, fault)?)
}

/// Writes `dataset` with `num_splits` stratified splits into `out`.
fn save_with_splits(mut dataset: Dataset, out: &Path, num_splits: usize, split_seed: u64) -> Result<DatasetStats> {
    if dataset.splits().is_empty() && num_splits > 0 {
        let splits = make_splits(dataset.labels(), dataset.num_classes(), DEFAULT_FRACTIONS, num_splits, split_seed)?;
        dataset = dataset.with_splits(splits)?;
    }
    save_dataset_dir(&dataset, out)?;
    Ok(dataset.stats())
}

/// Generates a synthetic dataset directory.
pub fn synth_command(spec: &SyntheticSpec, out: &Path, num_splits: usize, split_seed: u64) -> Result<DatasetStats> {
    save_with_splits(spec.generate()?, out, num_splits, split_seed)
}

/// Converts a raw benchmark directory. Stored `.npz` splits are kept;
/// otherwise `num_splits` stratified splits are drawn.
pub fn import_command(raw: &Path, out: &Path, num_splits: usize, split_seed: u64) -> Result<DatasetStats> {
    let dataset = webkb::read_raw_graph(raw)?;
    let files = webkb::split_files(raw)?;
    let dataset = if files.is_empty() {
        dataset
    } else {
        let n = dataset.num_nodes();
        let splits = files
            .iter()
            .map(|f| webkb::read_npz_split(f, n))
            .collect::<Result<Vec<_>>>()?;
        dataset.with_splits(splits)?
    };
    save_with_splits(dataset, out, num_splits, split_seed)
}

/// Prints a value as one line of JSON on stdout.
pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer(&mut stdout, value)?;
    writeln!(stdout).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}
