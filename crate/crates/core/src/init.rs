//! Seeded parameter initializers.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// Uniform in `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`, where the
/// fans are the two matrix dimensions.
pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-s..=s)).collect();
    Tensor::matrix(rows, cols, data).expect("non-empty dims")
}

/// Rows drawn uniformly from the unit sphere.
pub fn unit_rows<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let mut row: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            row[0] = 1.0;
        }
        data.extend(row);
    }
    Tensor::matrix(rows, cols, data).expect("non-empty dims")
}
