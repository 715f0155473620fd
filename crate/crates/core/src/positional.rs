//! Feature smoothing, positional coordinates and neighborhood graphs.
//!
//! Smoothing averages each node's features over its closed neighborhood
//! (itself plus its input-graph neighbors), `L` times. Positional
//! coordinates are learned linear projections of the smoothed tables.
//! Convolution supports are kNN graphs over the smoothed tables, built
//! once and never changed afterwards, plus the input graph itself.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::tensor::{Tape, Tensor, Var};

/// Feature tables `E^(0..=L)`; level 0 is the raw feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedFeatures {
    levels: Vec<Tensor>,
}

impl SmoothedFeatures {
    /// Repeated closed-neighborhood averaging of `features` over
    /// `adjacency` (neighbor lists without self-loops).
    pub fn compute(features: &Tensor, adjacency: &[Vec<usize>], num_smoothings: usize) -> Self {
        let cols = features.cols();
        let mut levels = Vec::with_capacity(num_smoothings + 1);
        levels.push(features.clone());
        for _ in 0..num_smoothings {
            let prev = levels.last().expect("level 0 present");
            let mut next = Tensor::zeros(prev.shape());
            for (v, nbrs) in adjacency.iter().enumerate() {
                let inv = 1.0 / (nbrs.len() + 1) as f64;
                let row = &mut next.data_mut()[v * cols..(v + 1) * cols];
                row.copy_from_slice(prev.row(v));
                for &u in nbrs {
                    for (o, x) in row.iter_mut().zip(prev.row(u)) {
                        *o += x;
                    }
                }
                row.iter_mut().for_each(|x| *x *= inv);
            }
            levels.push(next);
        }
        Self { levels }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &Tensor {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }
}

/// Smooths the dataset's features `num_smoothings` times on its own graph.
pub fn smooth_features(dataset: &Dataset, num_smoothings: usize) -> SmoothedFeatures {
    SmoothedFeatures::compute(dataset.features(), &dataset.adjacency(), num_smoothings)
}

/// Positional coordinates `phi^(l) = E^(l) W_phi^(l)^T` for every level,
/// recorded on the tape. `smoothed[l]` is an `n x d_x` tape value and
/// `projections[l]` a `d_phi x d_x` matrix.
pub fn positional_embed(tape: &mut Tape, smoothed: &[Var], projections: &[Var]) -> Result<Vec<Var>> {
    if smoothed.len() != projections.len() {
        return Err(Error::Shape(format!(
            "{} smoothed levels but {} projections",
            smoothed.len(),
            projections.len()
        )));
    }
    smoothed
        .iter()
        .zip(projections)
        .map(|(&e, &w)| {
            let wt = tape.transpose(w)?;
            tape.matmul(e, wt)
        })
        .collect()
}

/// Which feature table a neighborhood graph was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GraphLevel {
    /// kNN graph over the `l`-times smoothed features.
    Latent(usize),
    /// The dataset's own graph with self-loops.
    Input,
}

impl fmt::Display for GraphLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphLevel::Latent(l) => write!(f, "{l}"),
            GraphLevel::Input => f.write_str("input"),
        }
    }
}

/// Per-node neighbor lists used as convolution support. Every list
/// contains the node itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodGraph {
    level: GraphLevel,
    neighbors: Vec<Vec<usize>>,
    built_from: String,
}

/// Neighborhoods flattened into parallel arrays, grouped by center node.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub num_nodes: usize,
    pub centers: Arc<[usize]>,
    pub neighbors: Arc<[usize]>,
    /// Group boundaries: center `v` owns entries `offsets[v]..offsets[v+1]`.
    pub offsets: Arc<[usize]>,
}

impl EdgeIndex {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

impl NeighborhoodGraph {
    /// Checks that every list contains its own node and only valid ids.
    pub fn new(level: GraphLevel, neighbors: Vec<Vec<usize>>, built_from: impl Into<String>) -> Result<Self> {
        let n = neighbors.len();
        for (v, list) in neighbors.iter().enumerate() {
            if !list.contains(&v) {
                return Err(Error::InvalidArgument(format!("neighborhood of {v} lacks the self-loop")));
            }
            if list.iter().any(|&u| u >= n) {
                return Err(Error::InvalidArgument(format!("neighborhood of {v} has an out-of-range node")));
            }
        }
        Ok(Self {
            level,
            neighbors,
            built_from: built_from.into(),
        })
    }

    /// The input graph's closed neighborhoods, sorted by node index.
    pub fn from_input(dataset: &Dataset) -> Self {
        let neighbors = dataset
            .adjacency()
            .into_iter()
            .enumerate()
            .map(|(v, mut list)| {
                list.push(v);
                list.sort_unstable();
                list
            })
            .collect();
        Self {
            level: GraphLevel::Input,
            neighbors,
            built_from: "input-graph".into(),
        }
    }

    pub fn level(&self) -> GraphLevel {
        self.level
    }

    pub fn built_from(&self) -> &str {
        &self.built_from
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn edge_index(&self) -> EdgeIndex {
        let mut centers = Vec::new();
        let mut neighbors = Vec::new();
        let mut offsets = vec![0];
        for (v, list) in self.neighbors.iter().enumerate() {
            centers.extend(std::iter::repeat_n(v, list.len()));
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        EdgeIndex {
            num_nodes: self.neighbors.len(),
            centers: centers.into(),
            neighbors: neighbors.into(),
            offsets: offsets.into(),
        }
    }

    /// One line per node: `v<TAB>u1,u2,...`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (v, list) in self.neighbors.iter().enumerate() {
            let items: Vec<String> = list.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{v}\t{}", items.join(","));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, level: GraphLevel, built_from: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut neighbors = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |msg: &str| Error::parse(path, i + 1, msg);
            let (v, rest) = line.split_once('\t').ok_or_else(|| bad("expected v<TAB>neighbors"))?;
            let v: usize = v.parse().map_err(|_| bad("invalid node id"))?;
            if v != neighbors.len() {
                return Err(bad("node ids must be listed in order"));
            }
            let list = rest
                .split(',')
                .map(|u| u.trim().parse::<usize>().map_err(|_| bad("invalid neighbor id")))
                .collect::<Result<Vec<_>>>()?;
            neighbors.push(list);
        }
        Self::new(level, neighbors, built_from)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Each node's `k` nearest other rows by l2 distance, plus itself, sorted
/// by ascending distance with ties going to the lower node index.
pub fn build_knn_graph(features: &Tensor, k: usize) -> Result<NeighborhoodGraph> {
    let n = features.rows();
    if k >= n {
        return Err(Error::InvalidArgument(format!("k = {k} must be below the node count {n}")));
    }
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let neighbors = (0..n)
        .into_par_iter()
        .map(|v| {
            let row = features.row(v);
            let mut cands: Vec<(f64, usize)> = (0..n)
                .filter(|&u| u != v)
                .map(|u| (squared_distance(row, features.row(u)), u))
                .collect();
            if k < cands.len() {
                cands.select_nth_unstable_by(k, by_distance);
                cands.truncate(k);
            }
            cands.push((0.0, v));
            cands.sort_by(by_distance);
            cands.into_iter().map(|(_, u)| u).collect()
        })
        .collect();
    NeighborhoodGraph::new(GraphLevel::Latent(0), neighbors, "features")
}

/// kNN graphs over every smoothed level followed by the input graph.
pub fn build_all_graphs(dataset: &Dataset, smoothed: &SmoothedFeatures, k: usize) -> Result<Vec<NeighborhoodGraph>> {
    let mut graphs = Vec::with_capacity(smoothed.num_levels() + 1);
    for (l, table) in smoothed.levels().iter().enumerate() {
        let mut g = build_knn_graph(table, k)?;
        g.level = GraphLevel::Latent(l);
        g.built_from = format!("smoothed-features-{l}");
        graphs.push(g);
    }
    graphs.push(NeighborhoodGraph::from_input(dataset));
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_graph(xs: &[f64], edges: &[(usize, usize)]) -> Dataset {
        let n = xs.len();
        Dataset::new(Tensor::matrix(n, 1, xs.to_vec()).unwrap(), edges.iter().copied(), vec![0; n], 1).unwrap()
    }

    #[test]
    fn zero_smoothings_keep_raw_features() {
        let d = line_graph(&[1.0, 2.0], &[(0, 1)]);
        let s = smooth_features(&d, 0);
        assert_eq!(s.num_levels(), 1);
        assert_eq!(s.level(0), d.features());
    }

    #[test]
    fn two_node_path_averages() {
        let d = line_graph(&[2.0, 0.0], &[(0, 1)]);
        let s = smooth_features(&d, 1);
        assert_eq!(s.level(1).data(), &[1.0, 1.0]);
    }

    #[test]
    fn isolated_node_is_a_fixed_point() {
        let d = line_graph(&[5.0], &[]);
        let s = smooth_features(&d, 3);
        for l in 0..=3 {
            assert_eq!(s.level(l).data(), &[5.0]);
        }
    }

    #[test]
    fn projection_examples() {
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let w = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 1.0, 1.0, -1.0]).unwrap());
        let phi = positional_embed(&mut tape, &[e], &[w]).unwrap();
        assert_eq!(tape.value(phi[0]).data(), &[3.0, -1.0]);

        let id = tape.leaf(Tensor::identity(2));
        let phi = positional_embed(&mut tape, &[e], &[id]).unwrap();
        assert_eq!(tape.value(phi[0]).data(), &[1.0, 2.0]);

        let zero = tape.leaf(Tensor::zeros(&[3, 2]));
        let phi = positional_embed(&mut tape, &[e], &[zero]).unwrap();
        assert_eq!(tape.value(phi[0]).data(), &[0.0, 0.0, 0.0]);

        assert!(positional_embed(&mut tape, &[e, e], &[w]).is_err());
        let wrong = tape.leaf(Tensor::zeros(&[2, 3]));
        assert!(positional_embed(&mut tape, &[e], &[wrong]).is_err());
    }

    #[test]
    fn knn_on_a_line() {
        let x = Tensor::matrix(3, 1, vec![0.0, 1.0, 10.0]).unwrap();
        let g = build_knn_graph(&x, 1).unwrap();
        assert_eq!(g.neighbors(0), &[0, 1]);
        assert_eq!(g.neighbors(1), &[1, 0]);
        assert_eq!(g.neighbors(2), &[2, 1]);
    }

    #[test]
    fn knn_with_k_n_minus_one_is_complete() {
        let x = Tensor::matrix(4, 1, vec![0.0, 3.0, 1.0, 7.0]).unwrap();
        let g = build_knn_graph(&x, 3).unwrap();
        for v in 0..4 {
            let mut list = g.neighbors(v).to_vec();
            list.sort_unstable();
            assert_eq!(list, vec![0, 1, 2, 3]);
        }
        assert!(build_knn_graph(&x, 4).is_err());
    }

    #[test]
    fn knn_ties_go_to_lower_index() {
        // nodes 1 and 3 sit at the same point, equidistant from node 0
        let x = Tensor::matrix(4, 1, vec![0.0, 2.0, 5.0, 2.0]).unwrap();
        let g = build_knn_graph(&x, 1).unwrap();
        assert_eq!(g.neighbors(0), &[0, 1]);
        // node 3's nearest is node 1 at distance zero; it sorts before 3
        assert_eq!(g.neighbors(3), &[1, 3]);
    }

    #[test]
    fn all_graphs_count_and_input_graph() {
        let d = line_graph(&[0.0, 1.0, 4.0], &[]);
        let s = smooth_features(&d, 0);
        let gs = build_all_graphs(&d, &s, 1).unwrap();
        assert_eq!(gs.len(), 2);
        assert_eq!(gs[1].level(), GraphLevel::Input);
        for v in 0..3 {
            assert_eq!(gs[1].neighbors(v), &[v]);
        }
        let s5 = smooth_features(&d, 5);
        assert_eq!(build_all_graphs(&d, &s5, 1).unwrap().len(), 7);
    }

    #[test]
    fn text_round_trip() {
        let x = Tensor::matrix(5, 1, vec![0.0, 1.0, 3.0, 6.0, 10.0]).unwrap();
        let g = build_knn_graph(&x, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        g.save(&p).unwrap();
        assert_eq!(NeighborhoodGraph::load(&p, GraphLevel::Latent(0), "features").unwrap(), g);
    }

    #[test]
    fn edge_index_groups_by_center() {
        let x = Tensor::matrix(3, 1, vec![0.0, 1.0, 10.0]).unwrap();
        let ei = build_knn_graph(&x, 1).unwrap().edge_index();
        assert_eq!(&*ei.centers, &[0, 0, 1, 1, 2, 2]);
        assert_eq!(&*ei.neighbors, &[0, 1, 1, 0, 2, 1]);
        assert_eq!(&*ei.offsets, &[0, 2, 4, 6]);
    }
}
