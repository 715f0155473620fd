//! Plain-text dataset files.
//!
//! ```text
//! nodes.tsv   node_id<TAB>f1,f2,...,fd<TAB>label
//! edges.tsv   u<TAB>v
//! splits/split_<i>.tsv   node_id<TAB>train|val|test
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{Dataset, SplitMasks, SplitPart};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NODE_FILE: &str = "nodes.tsv";
pub const EDGE_FILE: &str = "edges.tsv";
pub const SPLIT_DIR: &str = "splits";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_index(path: &Path, line: usize, field: &str, what: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} {field:?}")))
}

struct NodeTable {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

fn parse_nodes(path: &Path) -> Result<NodeTable> {
    let text = read(path)?;
    let mut rows: Vec<Option<(Vec<f64>, usize)>> = Vec::new();
    let mut width = None;
    for (ln, line) in lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, ln, format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let id = parse_index(path, ln, fields[0], "node id")?;
        let feats = fields[1]
            .split(',')
            .map(|f| match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(path, ln, format!("invalid feature value {f:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(Error::parse(path, ln, format!("{} features, expected {w}", feats.len())));
            }
            _ => {}
        }
        let label: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, ln, format!("invalid label {:?}", fields[2])))?;
        if label < 0 {
            return Err(Error::parse(path, ln, format!("label {label} out of range")));
        }
        if id >= rows.len() {
            rows.resize(id + 1, None);
        }
        if rows[id].is_some() {
            return Err(Error::parse(path, ln, format!("duplicate node id {id}")));
        }
        rows[id] = Some((feats, label as usize));
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!("{}: no nodes", path.display())));
    }
    if let Some(missing) = rows.iter().position(Option::is_none) {
        return Err(Error::Dataset(format!("{}: node ids are not contiguous, {missing} is missing", path.display())));
    }
    let rows: Vec<(Vec<f64>, usize)> = rows.into_iter().map(Option::unwrap).collect();
    let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let cols = width.unwrap_or(0);
    let features = Tensor::matrix(rows.len(), cols, rows.into_iter().flat_map(|r| r.0).collect())?;
    Ok(NodeTable {
        features,
        labels,
        num_classes,
    })
}

fn parse_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (ln, line) in lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::parse(path, ln, format!("expected 2 fields, got {}", fields.len())));
        }
        let u = parse_index(path, ln, fields[0], "node index")?;
        let v = parse_index(path, ln, fields[1], "node index")?;
        if u >= n || v >= n {
            return Err(Error::parse(path, ln, format!("edge ({u}, {v}) out of range for {n} nodes")));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn parse_split(path: &Path, n: usize) -> Result<SplitMasks> {
    let text = read(path)?;
    let mut parts = vec![None; n];
    let mut seen = 0;
    for (ln, line) in lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(path, ln, format!("expected 2 tab-separated fields, got {}", fields.len())));
        }
        let id = parse_index(path, ln, fields[0], "node id")?;
        let part = SplitPart::parse(fields[1].trim())
            .ok_or_else(|| Error::parse(path, ln, format!("unknown split part {:?}", fields[1])))?;
        if id >= n {
            return Err(Error::parse(path, ln, format!("node {id} out of range for {n} nodes")));
        }
        if parts[id].replace(part).is_some() {
            return Err(Error::parse(path, ln, format!("node {id} listed twice")));
        }
        seen += 1;
    }
    if seen != n {
        return Err(Error::Dataset(format!(
            "{}: split lists {seen} nodes, dataset has {n}",
            path.display()
        )));
    }
    Ok(SplitMasks::new(parts))
}

/// Loads a dataset from explicit node, edge and split files.
pub fn load_dataset(node_file: &Path, edge_file: &Path, split_files: &[PathBuf]) -> Result<Dataset> {
    let nodes = parse_nodes(node_file)?;
    let n = nodes.features.rows();
    let edges = parse_edges(edge_file, n)?;
    let splits = split_files
        .iter()
        .map(|p| parse_split(p, n))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(nodes.features, edges, nodes.labels, nodes.num_classes)?.with_splits(splits)
}

fn split_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("split_"))
            .and_then(|s| s.parse::<usize>().ok());
        if let (Some(i), Some("tsv")) = (index, path.extension().and_then(|e| e.to_str())) {
            files.push((i, path));
        }
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

/// Loads `nodes.tsv`, `edges.tsv` and `splits/split_<i>.tsv` from `dir`.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    let splits = split_files_in(&dir.join(SPLIT_DIR))?;
    load_dataset(&dir.join(NODE_FILE), &dir.join(EDGE_FILE), &splits)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a dataset in the layout read by [`load_dataset_dir`], replacing
/// any split files already present.
pub fn save_dataset_dir(dataset: &Dataset, dir: &Path) -> Result<()> {
    let split_dir = dir.join(SPLIT_DIR);
    fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
    for stale in split_files_in(&split_dir)? {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }

    let mut text = String::new();
    for v in 0..dataset.num_nodes() {
        let feats: Vec<String> = dataset.features().row(v).iter().map(f64::to_string).collect();
        let _ = writeln!(text, "{v}\t{}\t{}", feats.join(","), dataset.labels()[v]);
    }
    write(&dir.join(NODE_FILE), &text)?;

    text.clear();
    for (u, v) in dataset.edges() {
        let _ = writeln!(text, "{u}\t{v}");
    }
    write(&dir.join(EDGE_FILE), &text)?;

    for (i, split) in dataset.splits().iter().enumerate() {
        text.clear();
        for v in 0..split.len() {
            if let Some(p) = split.part(v) {
                let _ = writeln!(text, "{v}\t{}", p.as_str());
            }
        }
        write(&split_dir.join(format!("split_{i}.tsv")), &text)?;
    }
    Ok(())
}
