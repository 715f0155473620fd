//! Converter for the raw WebKB / citation files distributed with the
//! geometric-GCN benchmark:
//!
//! ```text
//! out1_node_feature_label.txt   node_id<TAB>f1,f2,...<TAB>label   (header line)
//! out1_graph_edges.txt          u<TAB>v                           (header line)
//! <name>_split_<train>_<val>_<i>.npz   train_mask, val_mask, test_mask
//! ```

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use deform_gnn_core::graph::{Dataset, SplitMasks, SplitPart};
use deform_gnn_core::tensor::Tensor;

use crate::error::{CliError, Result};

pub const RAW_NODE_FILE: &str = "out1_node_feature_label.txt";
pub const RAW_EDGE_FILE: &str = "out1_graph_edges.txt";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Data lines after the header, with 1-based line numbers.
fn body(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: Option<&str>, what: &str) -> Result<T> {
    let s = s.ok_or_else(|| CliError::format(path, format!("line {line}: missing {what}")))?;
    s.trim()
        .parse()
        .map_err(|_| CliError::format(path, format!("line {line}: invalid {what} {s:?}")))
}

/// Reads the node and edge files of one raw dataset directory. Splits are
/// not attached.
pub fn read_raw_graph(dir: &Path) -> Result<Dataset> {
    let node_path = dir.join(RAW_NODE_FILE);
    let text = read(&node_path)?;
    let mut rows: Vec<(usize, Vec<f64>, usize)> = Vec::new();
    for (line, l) in body(&text) {
        let mut parts = l.split('\t');
        let id: usize = field(&node_path, line, parts.next(), "node id")?;
        let feats = parts
            .next()
            .ok_or_else(|| CliError::format(&node_path, format!("line {line}: missing features")))?
            .split(',')
            .map(|f| field(&node_path, line, Some(f), "feature"))
            .collect::<Result<Vec<f64>>>()?;
        let label: usize = field(&node_path, line, parts.next(), "label")?;
        rows.push((id, feats, label));
    }
    let n = rows.len();
    if n == 0 {
        return Err(CliError::format(&node_path, "no nodes"));
    }
    let d = rows[0].1.len();
    let mut features = vec![0.0; n * d];
    let mut labels = vec![usize::MAX; n];
    for (id, feats, label) in rows {
        if id >= n || labels[id] != usize::MAX {
            return Err(CliError::format(&node_path, format!("node ids must be a permutation of 0..{n}, saw {id}")));
        }
        if feats.len() != d {
            return Err(CliError::format(&node_path, format!("node {id} has {} features, expected {d}", feats.len())));
        }
        features[id * d..(id + 1) * d].copy_from_slice(&feats);
        labels[id] = label;
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);

    let edge_path = dir.join(RAW_EDGE_FILE);
    let text = read(&edge_path)?;
    let mut edges = Vec::new();
    for (line, l) in body(&text) {
        let mut parts = l.split_whitespace();
        let u: usize = field(&edge_path, line, parts.next(), "node id")?;
        let v: usize = field(&edge_path, line, parts.next(), "node id")?;
        edges.push((u, v));
    }
    let features = Tensor::matrix(n, d, features)?;
    Ok(Dataset::new(features, edges, labels, num_classes)?)
}

/// Split files in `dir`, ordered by their trailing index.
pub fn split_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if path.extension().and_then(|e| e.to_str()) != Some("npz") || !stem.contains("_split_") {
            continue;
        }
        if let Some(i) = stem.rsplit('_').next().and_then(|s| s.parse::<usize>().ok()) {
            found.push((i, path));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// One-dimensional boolean view of an `.npy` array: bool, integer or
/// float dtypes, nonzero meaning true.
pub fn parse_npy_mask(bytes: &[u8]) -> Result<Vec<bool>, String> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err("not an npy array".into());
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12),
        v => return Err(format!("unsupported npy version {v}")),
    };
    let header = bytes
        .get(start..start + header_len)
        .and_then(|h| std::str::from_utf8(h).ok())
        .ok_or("truncated npy header")?;
    let descr = quoted_value(header, "descr").ok_or("npy header lacks descr")?;
    if header.contains("'fortran_order': True") {
        return Err("fortran-ordered arrays are not supported".into());
    }
    let shape = header
        .split("'shape':")
        .nth(1)
        .and_then(|s| s.split(')').next())
        .ok_or("npy header lacks shape")?;
    let dims: Vec<usize> = shape
        .trim_start_matches([' ', '('])
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad shape {shape:?}")))
        .collect::<Result<_, _>>()?;
    let count: usize = dims.iter().product();
    let data = &bytes[start + header_len..];
    let kind = &descr[1..];
    let width: usize = kind[1..].parse().map_err(|_| format!("unsupported dtype {descr}"))?;
    if descr.starts_with('>') && width > 1 {
        return Err(format!("big-endian dtype {descr} is not supported"));
    }
    if data.len() < count * width {
        return Err("truncated npy data".into());
    }
    let chunks = data[..count * width].chunks_exact(width);
    let mask = match kind.as_bytes()[0] {
        b'b' | b'i' | b'u' => chunks.map(|c| c.iter().any(|&b| b != 0)).collect(),
        b'f' if width == 8 => chunks
            .map(|c| f64::from_le_bytes(c.try_into().expect("width 8")) != 0.0)
            .collect(),
        b'f' if width == 4 => chunks
            .map(|c| f32::from_le_bytes(c.try_into().expect("width 4")) != 0.0)
            .collect(),
        _ => return Err(format!("unsupported dtype {descr}")),
    };
    Ok(mask)
}

fn quoted_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let rest = header.split(&format!("'{key}':")).nth(1)?;
    let start = rest.find('\'')? + 1;
    let len = rest[start..].find('\'')?;
    Some(&rest[start..start + len])
}

/// Reads `train_mask`, `val_mask` and `test_mask` from one `.npz` file.
pub fn read_npz_split(path: &Path, num_nodes: usize) -> Result<SplitMasks> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut archive = zip::ZipArchive::new(file).map_err(|e| CliError::format(path, e.to_string()))?;
    let mut parts = vec![None; num_nodes];
    for (name, part) in [
        ("train_mask", SplitPart::Train),
        ("val_mask", SplitPart::Val),
        ("test_mask", SplitPart::Test),
    ] {
        let mut entry = archive
            .by_name(&format!("{name}.npy"))
            .map_err(|e| CliError::format(path, format!("{name}: {e}")))?;
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).map_err(|e| CliError::io(path, e))?;
        let mask = parse_npy_mask(&bytes).map_err(|m| CliError::format(path, format!("{name}: {m}")))?;
        if mask.len() != num_nodes {
            return Err(CliError::format(path, format!("{name} has {} entries for {num_nodes} nodes", mask.len())));
        }
        for (v, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            if parts[v].is_some() {
                return Err(CliError::format(path, format!("node {v} is in more than one mask")));
            }
            parts[v] = Some(part);
        }
    }
    Ok(SplitMasks::new(parts))
}
