use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of a synthetic graph with Gaussian class clusters and a
/// target homophily ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub homophily: f64,
    pub num_features: usize,
    pub degree: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 200,
            num_classes: 5,
            homophily: 0.1,
            num_features: 32,
            degree: 4,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<Dataset> {
        generate_synthetic(
            self.num_nodes,
            self.num_classes,
            self.homophily,
            self.num_features,
            self.degree,
            self.noise,
            self.seed,
        )
    }
}

/// Parses `key=value` pairs separated by commas, e.g.
/// `n=200,c=5,h=0.1,d=32,degree=4,noise=1.0,seed=7`. Unlisted keys keep
/// their defaults.
impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SyntheticSpec::default();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got {pair:?}")))?;
            let bad = || Error::InvalidArgument(format!("invalid value for {key}: {value:?}"));
            match key.trim() {
                "n" => spec.num_nodes = value.parse().map_err(|_| bad())?,
                "c" => spec.num_classes = value.parse().map_err(|_| bad())?,
                "h" => spec.homophily = value.parse().map_err(|_| bad())?,
                "d" | "dx" => spec.num_features = value.parse().map_err(|_| bad())?,
                "degree" => spec.degree = value.parse().map_err(|_| bad())?,
                "noise" => spec.noise = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                other => return Err(Error::InvalidArgument(format!("unknown synthetic key {other:?}"))),
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={},c={},h={},d={},degree={},noise={},seed={}",
            self.num_nodes, self.num_classes, self.homophily, self.num_features, self.degree, self.noise, self.seed
        )
    }
}

/// Draws a graph with balanced classes, Gaussian class-mean features and
/// label-dependent wiring.
///
/// Every node proposes `degree` edges. Each proposal picks a same-class
/// partner with probability `target_h` and a partner from another class
/// otherwise; proposals that would duplicate an edge are redrawn a bounded
/// number of times and then dropped. The achieved ratio is available from
/// [`super::homophily_ratio`].
pub fn generate_synthetic(
    n: usize,
    num_classes: usize,
    target_h: f64,
    num_features: usize,
    degree: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || n < num_classes {
        return Err(Error::InvalidArgument(format!(
            "need n >= C >= 2, got n={n}, C={num_classes}"
        )));
    }
    if !(0.0..=1.0).contains(&target_h) {
        return Err(Error::InvalidArgument(format!("target homophily {target_h} outside [0, 1]")));
    }
    if degree == 0 || degree >= n {
        return Err(Error::InvalidArgument(format!("degree {degree} infeasible for {n} nodes")));
    }
    if num_features == 0 || !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument("need at least one feature and a finite noise >= 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);

    let means: Vec<f64> = (0..num_classes * num_features)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let mut features = Vec::with_capacity(n * num_features);
    for &y in &labels {
        for j in 0..num_features {
            let z: f64 = rng.sample(StandardNormal);
            features.push(means[y * num_features + j] + noise * z);
        }
    }

    let mut members = vec![Vec::new(); num_classes];
    for (v, &y) in labels.iter().enumerate() {
        members[y].push(v);
    }

    const ATTEMPTS: usize = 32;
    let mut edges = HashSet::new();
    let mut ordered = Vec::new();
    for v in 0..n {
        for _ in 0..degree {
            let same = rng.gen::<f64>() < target_h;
            let pool = &members[labels[v]];
            if same && pool.len() < 2 {
                continue;
            }
            for _ in 0..ATTEMPTS {
                let u = if same {
                    pool[rng.gen_range(0..pool.len())]
                } else {
                    rng.gen_range(0..n)
                };
                if u == v || (labels[u] == labels[v]) != same {
                    continue;
                }
                let key = (u.min(v), u.max(v));
                if edges.insert(key) {
                    ordered.push(key);
                    break;
                }
            }
        }
    }

    Dataset::new(
        Tensor::matrix(n, num_features, features)?,
        ordered,
        labels,
        num_classes,
    )
}
