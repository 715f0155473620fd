use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitPart::Train),
            "val" => Some(SplitPart::Val),
            "test" => Some(SplitPart::Test),
            _ => None,
        }
    }
}

/// One train/val/test partition, stored as a part tag per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMasks {
    parts: Vec<Option<SplitPart>>,
}

impl SplitMasks {
    /// Nodes tagged `None` belong to no part.
    pub fn new(parts: Vec<Option<SplitPart>>) -> Self {
        Self { parts }
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn part(&self, node: usize) -> Option<SplitPart> {
        self.parts[node]
    }

    pub fn mask(&self, part: SplitPart) -> Vec<bool> {
        self.parts.iter().map(|p| *p == Some(part)).collect()
    }

    /// Node indices in `part`, ascending.
    pub fn indices(&self, part: SplitPart) -> Vec<usize> {
        (0..self.parts.len())
            .filter(|&v| self.parts[v] == Some(part))
            .collect()
    }

    pub fn count(&self, part: SplitPart) -> usize {
        self.parts.iter().filter(|p| **p == Some(part)).count()
    }
}

/// A node-classification graph: features, simple undirected edges,
/// labels, and any number of split instances.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    edges: Vec<(usize, usize)>,
    labels: Vec<usize>,
    num_classes: usize,
    splits: Vec<SplitMasks>,
}

impl Dataset {
    /// Validates and normalizes a graph. Edges are symmetrized,
    /// deduplicated and stored as sorted `(min, max)` pairs; self-loops are
    /// dropped since neighborhood operators add them back.
    pub fn new(
        features: Tensor,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Dataset(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Dataset(format!("{} labels for {n} nodes", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Dataset(format!("label {bad} out of range for {num_classes} classes")));
        }
        if !features.is_finite() {
            return Err(Error::Dataset("non-finite feature value".into()));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Dataset(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        Ok(Self {
            features,
            edges: set.into_iter().collect(),
            labels,
            num_classes,
            splits: Vec::new(),
        })
    }

    /// Attaches split instances after checking their lengths.
    pub fn with_splits(mut self, splits: Vec<SplitMasks>) -> Result<Self> {
        for (i, s) in splits.iter().enumerate() {
            if s.len() != self.num_nodes() {
                return Err(Error::Dataset(format!(
                    "split {i} covers {} nodes, dataset has {}",
                    s.len(),
                    self.num_nodes()
                )));
            }
        }
        self.splits = splits;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Undirected edges as sorted `(min, max)` pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[SplitMasks] {
        &self.splits
    }

    pub fn split(&self, i: usize) -> Result<&SplitMasks> {
        self.splits.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("split {i} requested, dataset has {}", self.splits.len()))
        })
    }

    /// Sorted neighbor lists without self-loops.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn stats(&self) -> DatasetStats {
        let n = self.num_nodes();
        DatasetStats {
            num_classes: self.num_classes,
            num_nodes: n,
            num_edges: self.edges.len(),
            num_features: self.num_features(),
            average_degree: 2.0 * self.edges.len() as f64 / n as f64,
            homophily_ratio: homophily_ratio(self).ok(),
        }
    }
}

/// Summary row in the style of a dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_classes: usize,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_features: usize,
    pub average_degree: f64,
    /// Absent when the graph has no edges.
    pub homophily_ratio: Option<f64>,
}

/// Fraction of undirected edges whose endpoints share a label.
pub fn homophily_ratio(dataset: &Dataset) -> Result<f64> {
    let edges = dataset.edges();
    if edges.is_empty() {
        return Err(Error::NoEdges);
    }
    let labels = dataset.labels();
    let same = edges.iter().filter(|(u, v)| labels[*u] == labels[*v]).count();
    Ok(same as f64 / edges.len() as f64)
}
