use std::sync::Arc;

use super::{ModelConfig, ModelKind};
use crate::error::Result;
use crate::graph::Dataset;
use crate::positional::{build_all_graphs, smooth_features, EdgeIndex, NeighborhoodGraph, SmoothedFeatures};
use crate::tensor::Tensor;

/// Symmetric-normalized input adjacency with self-loops, flattened.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    pub edges: EdgeIndex,
    /// `E x 1` column of `(deg(v) deg(u))^(-1/2)`, degrees counting the
    /// self-loop.
    pub weights: Tensor,
}

impl NormalizedAdjacency {
    pub fn new(dataset: &Dataset) -> Self {
        let graph = NeighborhoodGraph::from_input(dataset);
        let edges = graph.edge_index();
        let deg: Vec<f64> = (0..graph.num_nodes())
            .map(|v| graph.neighbors(v).len() as f64)
            .collect();
        let weights: Vec<f64> = edges
            .centers
            .iter()
            .zip(edges.neighbors.iter())
            .map(|(&v, &u)| 1.0 / (deg[v] * deg[u]).sqrt())
            .collect();
        Self {
            edges,
            weights: Tensor::matrix(weights.len(), 1, weights).expect("non-empty graph"),
        }
    }
}

/// Everything a forward pass reads besides the parameters. Built once per
/// dataset and configuration; graphs are immutable afterwards.
#[derive(Clone, Debug)]
pub struct GraphContext {
    features: Tensor,
    labels: Arc<[usize]>,
    num_classes: usize,
    smoothed: Option<SmoothedFeatures>,
    graphs: Vec<NeighborhoodGraph>,
    edge_indices: Vec<EdgeIndex>,
    adjacency: Option<NormalizedAdjacency>,
}

impl GraphContext {
    pub fn build(dataset: &Dataset, config: &ModelConfig) -> Result<Self> {
        let mut ctx = Self {
            features: dataset.features().clone(),
            labels: dataset.labels().into(),
            num_classes: dataset.num_classes(),
            smoothed: None,
            graphs: Vec::new(),
            edge_indices: Vec::new(),
            adjacency: None,
        };
        match config.kind {
            ModelKind::Deformable => {
                let smoothed = smooth_features(dataset, config.num_smoothings);
                let graphs = build_all_graphs(dataset, &smoothed, config.knn)?;
                ctx.edge_indices = graphs.iter().map(NeighborhoodGraph::edge_index).collect();
                ctx.graphs = graphs;
                ctx.smoothed = Some(smoothed);
            }
            ModelKind::Gcn => ctx.adjacency = Some(NormalizedAdjacency::new(dataset)),
            ModelKind::Mlp => {}
        }
        Ok(ctx)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &Arc<[usize]> {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn smoothed(&self) -> Option<&SmoothedFeatures> {
        self.smoothed.as_ref()
    }

    pub fn graphs(&self) -> &[NeighborhoodGraph] {
        &self.graphs
    }

    pub fn edge_indices(&self) -> &[EdgeIndex] {
        &self.edge_indices
    }

    pub fn adjacency(&self) -> Option<&NormalizedAdjacency> {
        self.adjacency.as_ref()
    }
}
