//! Graph datasets: the in-memory model, text file formats, stratified
//! splits, and a synthetic generator with a tunable homophily ratio.

mod dataset;
mod io;
mod splits;
mod synthetic;

pub use dataset::{homophily_ratio, Dataset, DatasetStats, SplitMasks, SplitPart};
pub use io::{load_dataset, load_dataset_dir, save_dataset_dir, EDGE_FILE, NODE_FILE, SPLIT_DIR};
pub use splits::{make_splits, DEFAULT_FRACTIONS};
pub use synthetic::{generate_synthetic, SyntheticSpec};
