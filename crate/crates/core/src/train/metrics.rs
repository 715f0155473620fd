use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise argmax; ties go to the lowest column.
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Fraction of `nodes` whose argmax prediction matches the label.
pub fn accuracy(logits: &Tensor, labels: &[usize], nodes: &[usize], part: &'static str) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::EmptyMask(part));
    }
    let pred = predictions(logits);
    let correct = nodes.iter().filter(|&&v| pred[v] == labels[v]).count();
    Ok(correct as f64 / nodes.len() as f64)
}

/// Mean and 95% t-interval half-width over independent runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub mean: f64,
    pub std_dev: f64,
    /// `None` for a single run.
    pub ci95: Option<f64>,
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidArgument("summary of zero runs".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Ok(Self {
                runs: 1,
                mean,
                std_dev: 0.0,
                ci95: None,
            });
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .inverse_cdf(0.975);
        Ok(Self {
            runs: n,
            mean,
            std_dev: sd,
            ci95: Some(t * sd / (n as f64).sqrt()),
        })
    }
}
