use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{SplitMasks, SplitPart};
use crate::error::{Error, Result};

/// Train/validation/test fractions per class.
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.48, 0.32, 0.20);

/// Per-class stratified random splits.
///
/// Within each class of `m` nodes, `floor(train * m)` go to train,
/// `floor(val * m)` to validation and the rest to test. Fails when a
/// non-empty class would get no training node.
pub fn make_splits(
    labels: &[usize],
    num_classes: usize,
    fractions: (f64, f64, f64),
    num_splits: usize,
    seed: u64,
) -> Result<Vec<SplitMasks>> {
    let (train, val, test) = fractions;
    if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (v, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {num_classes} classes")));
        }
        by_class[y].push(v);
    }
    for (c, members) in by_class.iter().enumerate() {
        let m = members.len();
        if m > 0 && (train * m as f64).floor() < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "class {c} has {m} node(s), too few for a training fraction of {train}"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(num_splits);
    for _ in 0..num_splits {
        let mut parts = vec![None; labels.len()];
        for members in &by_class {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            let m = shuffled.len() as f64;
            let n_train = (train * m).floor() as usize;
            let n_val = (val * m).floor() as usize;
            for (i, &v) in shuffled.iter().enumerate() {
                parts[v] = Some(if i < n_train {
                    SplitPart::Train
                } else if i < n_train + n_val {
                    SplitPart::Val
                } else {
                    SplitPart::Test
                });
            }
        }
        out.push(SplitMasks::new(parts));
    }
    Ok(out)
}
