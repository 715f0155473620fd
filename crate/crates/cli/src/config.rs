//! Flat `key = value` run configuration with grid lists.
//!
//! Values may be comma-separated lists; the grid is the product of all
//! lists. Later layers override earlier ones: defaults, then the config
//! file, then `DEFORM_GNN_SEED`, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use deform_gnn_core::model::ModelKind;
use deform_gnn_core::train::TrainConfig;

use crate::error::{CliError, Result};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "DEFORM_GNN_SEED";

/// Keys that map onto [`TrainConfig`] fields, in grid order.
pub const TRAIN_KEYS: [&str; 15] = [
    "model",
    "hidden_dim",
    "num_smoothings",
    "num_kernels",
    "knn",
    "pos_dim",
    "dropout",
    "deform_hidden",
    "deform",
    "lr",
    "weight_decay",
    "epochs",
    "alpha",
    "beta",
    "seed",
];

/// Keys describing the data and run counts.
pub const DATA_KEYS: [&str; 5] = ["dataset", "synthetic", "splits", "seeds", "split_seed"];

/// Raw settings by key. Values are unparsed strings.
pub type Settings = BTreeMap<String, String>;

fn known(key: &str) -> bool {
    TRAIN_KEYS.contains(&key) || DATA_KEYS.contains(&key)
}

/// Parses a config file: one `key = value` per line, `#` starts a comment.
pub fn parse_config(text: &str, origin: &str) -> Result<Settings> {
    let mut out = Settings::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
        let key = key.trim();
        if !known(key) {
            return Err(CliError::Config(format!("{origin}:{}: unknown key {key:?}", i + 1)));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Settings> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

/// Layers the file, the seed variable and the flags over each other.
pub fn resolve(file: Option<&Path>, env_seed: Option<String>, flags: Settings) -> Result<Settings> {
    let mut settings = match file {
        Some(p) => read_config(p)?,
        None => Settings::new(),
    };
    if let Some(seed) = env_seed {
        settings.insert("seed".into(), seed);
    }
    for (key, value) in flags {
        if !known(&key) {
            return Err(CliError::Config(format!("unknown key {key:?}")));
        }
        settings.insert(key, value);
    }
    Ok(settings)
}

fn bad(key: &str, value: &str) -> CliError {
    CliError::Config(format!("invalid value for {key}: {value:?}"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

/// Sets one training field from its string form.
pub fn apply(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let m = &mut config.model;
    match key {
        "model" => m.kind = value.parse::<ModelKind>().map_err(|_| bad(key, value))?,
        "hidden_dim" => m.hidden_dim = parse(key, value)?,
        "num_smoothings" => m.num_smoothings = parse(key, value)?,
        "num_kernels" => m.num_kernels = parse(key, value)?,
        "knn" => m.knn = parse(key, value)?,
        "pos_dim" => m.pos_dim = parse(key, value)?,
        "dropout" => m.dropout = parse(key, value)?,
        "deform_hidden" => {
            m.deform_hidden = match value {
                "auto" => None,
                v => Some(parse(key, v)?),
            }
        }
        "deform" => m.deform = parse(key, value)?,
        "lr" => config.lr = parse(key, value)?,
        "weight_decay" => config.weight_decay = parse(key, value)?,
        "epochs" => config.epochs = parse(key, value)?,
        "alpha" => config.alpha = parse(key, value)?,
        "beta" => config.beta = parse(key, value)?,
        "seed" => config.seed = parse(key, value)?,
        other => return Err(CliError::Config(format!("{other:?} is not a training key"))),
    }
    Ok(())
}

fn list(value: &str) -> Vec<&str> {
    value.split(',').map(str::trim).filter(|v| !v.is_empty()).collect()
}

/// Every combination of the listed training values, first key slowest.
pub fn expand_grid(settings: &Settings) -> Result<Vec<TrainConfig>> {
    let mut grid = vec![TrainConfig::default()];
    for key in TRAIN_KEYS {
        let Some(value) = settings.get(key) else { continue };
        let values = list(value);
        if values.is_empty() {
            return Err(bad(key, value));
        }
        let mut next = Vec::with_capacity(grid.len() * values.len());
        for base in &grid {
            for v in &values {
                let mut c = base.clone();
                apply(&mut c, key, v)?;
                next.push(c);
            }
        }
        grid = next;
    }
    for c in &grid {
        c.validate()?;
    }
    Ok(grid)
}

/// Single-valued setting parsed as `T`, or `default` when absent.
pub fn scalar<T: std::str::FromStr>(settings: &Settings, key: &str, default: T) -> Result<T> {
    match settings.get(key) {
        None => Ok(default),
        Some(v) if v.contains(',') => Err(CliError::Config(format!("{key} takes a single value, got {v:?}"))),
        Some(v) => parse(key, v),
    }
}

/// Fully resolved training configuration in config-file syntax.
pub fn render(config: &TrainConfig) -> String {
    let m = &config.model;
    let deform_hidden = m.deform_hidden.map_or("auto".to_string(), |h| h.to_string());
    let pairs: [(&str, String); 15] = [
        ("model", m.kind.to_string()),
        ("hidden_dim", m.hidden_dim.to_string()),
        ("num_smoothings", m.num_smoothings.to_string()),
        ("num_kernels", m.num_kernels.to_string()),
        ("knn", m.knn.to_string()),
        ("pos_dim", m.pos_dim.to_string()),
        ("dropout", m.dropout.to_string()),
        ("deform_hidden", deform_hidden),
        ("deform", m.deform.to_string()),
        ("lr", config.lr.to_string()),
        ("weight_decay", config.weight_decay.to_string()),
        ("epochs", config.epochs.to_string()),
        ("alpha", config.alpha.to_string()),
        ("beta", config.beta.to_string()),
        ("seed", config.seed.to_string()),
    ];
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}
